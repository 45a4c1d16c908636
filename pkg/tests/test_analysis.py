"""First-order approximation, rate fitting, inequality probes, studies."""

import numpy as np
import pytest

from perfhom import analysis
from perfhom import cell_problem as cp
from perfhom import fem
from perfhom import geometry as geom
from perfhom import mesh as meshmod
from perfhom import solvers
from perfhom import weight as wmod
from perfhom.config import load_config
from perfhom.errors import (ConfigValidationError, MeshLineageMismatch,
                            SlopeUnreliable)


CFG_TEMPLATE = """\
[experiment]
kind = {kind}
seed = 11

[geometry]
holes = {holes}
c0 = 0.2
omega = 1 1

[weight]
mode = {weight}

[discretization]
n = {n}
eps = {eps}

[rhs]
{rhs}

[probes]
trials = 6
enlarged_n = 16
"""


def write_cfg(tmp_path, kind="Converge", holes="disk 0.0 0.0 0.25",
              weight="distance", n=8, eps="1/2 1/4 1/8",
              rhs="form = weighted_source\nf = constant 1", name="exp.cfg"):
    path = tmp_path / name
    path.write_text(CFG_TEMPLATE.format(kind=kind, holes=holes, weight=weight,
                                        n=n, eps=eps, rhs=rhs))
    return load_config(str(path))


def benchmark_cell():
    return geom.build_cell_geometry([geom.HoleSpec.disk(0.0, 0.0, 0.25)], c0=0.2)


# -- fit_loglog ---------------------------------------------------------------

def test_fit_loglog_recovers_exact_power_law():
    x = np.array([0.5, 0.25, 0.125, 0.0625])
    y = 3.0 * x ** 1.7
    slope, intercept, resid = analysis.fit_loglog(x, y)
    assert slope == pytest.approx(1.7, abs=1e-12)
    assert intercept == pytest.approx(np.log(3.0), abs=1e-12)
    assert resid < 1e-13


def test_fit_loglog_rejects_degenerate_data():
    with pytest.raises(SlopeUnreliable):
        analysis.fit_loglog([0.5], [1.0])
    with pytest.raises(SlopeUnreliable):
        analysis.fit_loglog([0.5, 0.25], [1.0, 0.0])
    with pytest.raises(SlopeUnreliable):
        analysis.fit_loglog([0.5, 0.25], [1.0, -2.0])


# -- first-order approximation -------------------------------------------------

def eps_setup(n=8, N=4):
    cell = benchmark_cell()
    cm = meshmod.triangulate_cell(cell, n)
    w = wmod.distance_weight(cell, cm)
    cor = cp.solve_correctors(cm, fem.IDENTITY, w)
    tensor = cp.homogenized_matrix(cm, fem.IDENTITY, w, cor)
    spec = geom.build_perforated_domain(cell, (1, 1), N)
    dm = meshmod.tile_domain_mesh(cm, spec)
    phi_eps = wmod.evaluate_weight_on_domain(w, spec, dm)
    u_eps = solvers.solve_eps_problem(dm, fem.IDENTITY, phi_eps,
                                      ("weighted_source", 1.0, None))
    solid = meshmod.triangulate_solid((1, 1), 2 * N)
    F = solvers.make_F_eps(cm, w, 1.0 / N, 1.0)
    u0 = solvers.solve_homogenized(solid, tensor, F)
    return cell, cm, w, cor, tensor, spec, dm, u_eps, u0


def test_first_order_field_reduces_to_u_diff_in_the_layer():
    cell, cm, w, cor, tensor, spec, dm, u_eps, u0 = eps_setup()
    fo = analysis.first_order_approximation(u_eps, u0, cor, spec)
    assert fo.c1 == pytest.approx(0.05)  # c0 / 4
    assert fo.layer == pytest.approx((0.05 * 0.25, 0.10 * 0.25))
    inside = fo.eta == 0.0
    assert np.any(inside)
    assert np.array_equal(fo.w[inside], fo.u_diff[inside])
    # strictly inside the domain the cutoff is 1 and the corrector acts
    assert np.any(fo.eta == 1.0)
    assert fo.w.shape == (dm.n_vertices,)


def test_first_order_field_rejects_foreign_correctors():
    cell, cm, w, cor, tensor, spec, dm, u_eps, u0 = eps_setup()
    cm2 = meshmod.triangulate_cell(cell, 16)
    w2 = wmod.distance_weight(cell, cm2)
    cor2 = cp.solve_correctors(cm2, fem.IDENTITY, w2)
    with pytest.raises(MeshLineageMismatch):
        analysis.first_order_approximation(u_eps, u0, cor2, spec)


# -- probes --------------------------------------------------------------------

def test_poincare_probe_unperforated_matches_laplace():
    solid_cell = geom.build_cell_geometry([], c0=0.2)
    cm = meshmod.triangulate_cell(solid_cell, 16)
    w = wmod.ground_state_weight(solid_cell, cm)
    spec = geom.build_perforated_domain(solid_cell, (1, 1), 1)
    dm = meshmod.tile_domain_mesh(cm, spec)
    phi_eps = wmod.evaluate_weight_on_domain(w, spec, dm)
    c_p = analysis.poincare_probe(dm, phi_eps)
    assert c_p == pytest.approx((2.0 * np.pi ** 2) ** -0.5, rel=0.01)


def test_extension_probe_linear_trial_is_analytic():
    # the enlarged-hole cell: hole radius 0.25 + 0.2/8 = 0.275; extending
    # f = x_1 by x_1 itself gives ratio sqrt(|Y| / |Y'_*|)
    enlarged = benchmark_cell().enlarged()
    cm = meshmod.triangulate_cell(enlarged, 32)
    probe = analysis.extension_probe(cm, trials=5, seed=3)
    analytic = np.sqrt(1.0 / (1.0 - np.pi * 0.275 ** 2))
    assert probe.linear_ratio == pytest.approx(analytic, rel=0.01)
    assert probe.c_e >= probe.linear_ratio - 1e-12
    assert probe.n_trials >= 5


def test_extension_probe_empty_cell_is_trivial():
    cell = geom.build_cell_geometry([], c0=0.2)
    cm = meshmod.triangulate_cell(cell, 8)
    probe = analysis.extension_probe(cm, trials=3, seed=0)
    assert probe.linear_ratio == pytest.approx(1.0, abs=1e-12)
    assert probe.c_e == pytest.approx(1.0, abs=1e-12)


def test_sobolev_probe_positive_and_seeded():
    cell, cm, w, cor, tensor, spec, dm, u_eps, u0 = eps_setup()
    phi_eps = wmod.evaluate_weight_on_domain(w, spec, dm)
    r1 = analysis.sobolev_linf_probe(dm, phi_eps, trials=5, seed=9)
    r2 = analysis.sobolev_linf_probe(dm, phi_eps, trials=5, seed=9)
    assert r1 > 0.0 and np.isfinite(r1)
    assert r1 == r2


# -- studies -------------------------------------------------------------------

def test_convergence_study_on_small_ladder(tmp_path):
    cfg = write_cfg(tmp_path)
    report = analysis.convergence_study(cfg)
    assert len(report.records) == 3
    assert report.eps_values == ["1/2", "1/4", "1/8"]
    assert report.grad_slope > 0.0
    assert not report.no_homogenization_contrast
    assert all(report.corrector_improved)
    assert report.l2_consistent


def test_convergence_study_flags_empty_cell(tmp_path):
    cfg = write_cfg(tmp_path, holes="none", weight="ground_state")
    report = analysis.convergence_study(cfg)
    # phi = 1 and chi = 0: u_eps solves the homogenized problem already
    assert report.no_homogenization_contrast
    assert report.chi_max <= 1e-12


def test_convergence_study_rejects_div_form(tmp_path):
    cfg = write_cfg(tmp_path, rhs="form = div_form\nf = constant 1 0\nF = constant 1")
    with pytest.raises(ConfigValidationError):
        analysis.convergence_study(cfg)


def test_convergence_study_zero_source_is_unreliable(tmp_path):
    cfg = write_cfg(tmp_path, rhs="form = weighted_source\nf = constant 0")
    with pytest.raises(SlopeUnreliable):
        analysis.convergence_study(cfg)


def test_lipschitz_study_reports_bounded_spreads(tmp_path):
    cfg = write_cfg(tmp_path, kind="Lipschitz")
    report = analysis.lipschitz_uniformity(cfg)
    assert not report.not_applicable
    assert report.spread_inf is not None and report.spread_inf >= 1.0
    assert len(report.r_inf) == 3


def test_lipschitz_study_not_applicable_for_zero_source(tmp_path):
    cfg = write_cfg(tmp_path, kind="Lipschitz",
                    rhs="form = weighted_source\nf = constant 0")
    report = analysis.lipschitz_uniformity(cfg)
    assert report.not_applicable
    assert report.spread_inf is None


def test_spectrum_needs_ground_state_weight(tmp_path):
    # rejected at configuration time ...
    with pytest.raises(ConfigValidationError):
        write_cfg(tmp_path, kind="Spectrum")
    # ... and the study itself guards against mutated configurations
    cfg = write_cfg(tmp_path, kind="Probes", eps="1/2 1/4", name="probe.cfg")
    assert cfg.weight_mode == "distance"
    with pytest.raises(ConfigValidationError):
        analysis.spectrum_study(cfg)


def test_probe_study_collects_all_series(tmp_path):
    cfg = write_cfg(tmp_path, kind="Probes", eps="1/2 1/4")
    report = analysis.probe_study(cfg)
    assert len(report.c_p) == 2
    assert len(report.sobolev) == 2
    assert report.spread_cp is not None and report.spread_cp < 2.0
    assert report.linear_ratio > 1.0
    assert report.c_e >= report.linear_ratio


def test_run_ladder_is_deterministic_across_workers(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(CFG_TEMPLATE.format(
        kind="Lipschitz", holes="disk 0.0 0.0 0.25", weight="distance",
        n=8, eps="1/2 1/4", rhs="form = weighted_source\nf = constant 1"))
    cfg1 = load_config(str(path), workers_override=1)
    cfg2 = load_config(str(path), workers_override=2)
    rec1 = analysis.run_ladder(cfg1, {"converge", "lipschitz"})
    rec2 = analysis.run_ladder(cfg2, {"converge", "lipschitz"})
    for a, b in zip(rec1, rec2):
        assert a["E_grad"] == b["E_grad"]
        assert a["r_inf"] == b["r_inf"]


def test_studies_reuse_prebuilt_records(tmp_path):
    cfg = write_cfg(tmp_path, kind="Converge", eps="1/2 1/4 1/8")
    art = analysis.build_cell_artifacts(cfg)
    records = analysis.run_ladder(cfg, {"converge"}, art)
    fused = analysis.convergence_study(cfg, art, records)
    fresh = analysis.convergence_study(cfg)
    assert fused.grad_slope == fresh.grad_slope
    assert fused.records[0]["E_L2"] == fresh.records[0]["E_L2"]
