"""End-to-end acceptance gate.

Each test exercises one numbered criterion from perfhom.acceptance and
prints its one-line PASS/FAIL verdict.  Run with ``pytest -v -s`` to see
the verdict lines inline; on failure the line is repeated in the
assertion message.

The suite object is shared across all eleven tests so that expensive
artifacts (the n=64 cell solve, the epsilon ladder) are computed once.
"""

import pytest

from perfhom import acceptance

TITLES = {
    1: "trivial-cell-exactness",
    2: "homogenized-tensor-structure",
    3: "weight-scaling-covariance",
    4: "dense-oracle-equivalence",
    5: "convergence-rate",
    6: "uniform-lipschitz-ratio",
    7: "uniform-w1p-ratios",
    8: "inequality-probes",
    9: "spectral-asymptotics",
    10: "flux-corrector-identities",
    11: "byte-identical-reruns",
}


@pytest.fixture(scope="module")
def suite():
    return acceptance.AcceptanceSuite()


@pytest.mark.parametrize(
    "number", sorted(TITLES), ids=[f"{k:02d}-{v}" for k, v in sorted(TITLES.items())]
)
def test_criterion(suite, number):
    result = getattr(suite, f"criterion_{number}")()
    print(result.line())
    assert result.passed, result.line()
