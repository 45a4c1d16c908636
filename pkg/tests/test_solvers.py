"""Epsilon-scale, homogenized, and spectral solvers."""

import numpy as np
import pytest

from perfhom import cell_problem as cp
from perfhom import fem
from perfhom import geometry as geom
from perfhom import mesh as meshmod
from perfhom import solvers
from perfhom import weight as wmod
from perfhom.errors import FieldKindMismatch

import oracles


def benchmark_cell():
    return geom.build_cell_geometry([geom.HoleSpec.disk(0.0, 0.0, 0.25)], c0=0.2)


def disk_domain(n, N):
    cell = benchmark_cell()
    cm = meshmod.triangulate_cell(cell, n)
    w = wmod.distance_weight(cell, cm)
    spec = geom.build_perforated_domain(cell, (1, 1), N)
    dm = meshmod.tile_domain_mesh(cm, spec)
    phi_eps = wmod.evaluate_weight_on_domain(w, spec, dm)
    return cm, w, dm, phi_eps


def poisson_domain(n):
    """Unperforated domain with phi = 1: the degenerate solver reduces to
    the plain Poisson problem there."""
    cell = geom.build_cell_geometry([], c0=0.2)
    cm = meshmod.triangulate_cell(cell, n)
    w = wmod.ground_state_weight(cell, cm)
    spec = geom.build_perforated_domain(cell, (1, 1), 1)
    dm = meshmod.tile_domain_mesh(cm, spec)
    phi_eps = wmod.evaluate_weight_on_domain(w, spec, dm)
    return dm, phi_eps


def test_zero_rhs_gives_zero_solution():
    cm, w, dm, phi_eps = disk_domain(8, 2)
    sol = solvers.solve_eps_problem(dm, fem.IDENTITY, phi_eps,
                                    ("weighted_source", 0.0, None))
    assert np.all(sol.u == 0.0)
    assert sol.energy == 0.0
    assert sol.energy_constant is None
    assert sol.epsilon == 0.5


def test_poisson_limit_manufactured_solution():
    # phi = 1: -Delta u = 2 pi^2 sin(pi x) sin(pi y), u = sin(pi x) sin(pi y)
    errs = []
    for n in (16, 32):
        dm, phi_eps = poisson_domain(n)

        def f(pts):
            return 2.0 * np.pi ** 2 * np.sin(np.pi * pts[:, 0]) * np.sin(np.pi * pts[:, 1])

        sol = solvers.solve_eps_problem(dm, fem.IDENTITY, phi_eps,
                                        ("weighted_source", f, None))
        exact = np.sin(np.pi * dm.vertices[:, 0]) * np.sin(np.pi * dm.vertices[:, 1])
        errs.append(fem.weighted_norm(dm, sol.u - exact, None, 2.0))
    assert 3.2 < errs[0] / errs[1] < 5.0  # O(h^2) in L^2


def test_eps_problem_matches_dense_oracle():
    cm, w, dm, phi_eps = disk_domain(8, 1)
    assert dm.n_vertices <= 300
    sol = solvers.solve_eps_problem(dm, fem.IDENTITY, phi_eps,
                                    ("weighted_source", 1.0, None))
    S = fem.assemble_weighted_stiffness(dm, fem.IDENTITY, phi_eps, power=2)
    load = fem.assemble_load(dm, 1.0, phi_eps, "weighted_source")
    ref = oracles.solve_dirichlet_dense(S.toarray(), load,
                                        dm.outer_dirichlet_vertices(), dm.n_vertices)
    assert np.max(np.abs(sol.u - ref)) < 1e-8


def test_eps_solution_energy_bookkeeping():
    cm, w, dm, phi_eps = disk_domain(8, 2)
    sol = solvers.solve_eps_problem(dm, fem.IDENTITY, phi_eps,
                                    ("weighted_source", 1.0, None))
    grad = fem.weighted_norm(dm, sol.u, phi_eps, 2.0, gradient=True)
    assert sol.energy == pytest.approx(grad ** 2, rel=1e-12)
    # the normalization is ||f||_{L^2(Omega_eps)} = sqrt(perforated area) for f = 1
    area = float(np.sum(dm.signed_areas()))
    assert sol.energy_constant == pytest.approx(grad / np.sqrt(area), rel=1e-10)
    assert sol.residual <= 1e-10


def test_eps_problem_rejects_mismatched_weight():
    cm, w, dm, phi_eps = disk_domain(8, 2)
    with pytest.raises(FieldKindMismatch):
        solvers.solve_eps_problem(dm, fem.IDENTITY, phi_eps[:-1],
                                  ("weighted_source", 1.0, None))


def test_make_F_eps_folds_to_cell_coordinates():
    cell = benchmark_cell()
    cm = meshmod.triangulate_cell(cell, 8)
    w = wmod.distance_weight(cell, cm)
    F = solvers.make_F_eps(cm, w, 0.5, 1.0)
    pts = np.array([
        [0.25, 0.25],   # cell center: inside the hole, extended by zero
        [0.00, 0.00],   # cell corner: distance 0.25 sqrt2 - 0.25, capped at 0.1
        [0.25, 0.00],   # edge midpoint: distance 0.25, capped at 0.1
        [0.75, 0.75],   # center of the second diagonal cell: hole again
    ])
    assert np.allclose(F(pts), [0.0, 0.1, 0.1, 0.0], atol=1e-12)
    # F multiplies the weight by f pointwise
    F2 = solvers.make_F_eps(cm, w, 0.5, lambda p: p[:, 0])
    assert F2(pts[1:3]) == pytest.approx([0.0, 0.025], abs=1e-12)


def test_solve_homogenized_matches_dense_oracle():
    solid = meshmod.triangulate_solid((1, 1), 8)
    a_hat = np.array([[0.02, 0.004], [0.004, 0.01]])
    tensor = cp.HomogenizedTensor(a_hat=a_hat, a0=0.01, energy_discrepancy=0.0)
    sol = solvers.solve_homogenized(solid, tensor, 1.0)
    S = oracles.assemble_stiffness_dense(solid.vertices, solid.triangles, matrix=a_hat)
    load = fem.assemble_load(solid, 1.0, None, "weighted_source", power=0)
    ref = oracles.solve_dirichlet_dense(S, load, solid.outer_dirichlet_vertices(),
                                        solid.n_vertices)
    assert np.max(np.abs(sol.u0 - ref)) < 1e-8
    assert np.allclose(sol.recovered_gradient,
                       fem.nodal_gradient(solid, sol.u0), atol=1e-14)


def test_homogenized_solution_scales_inversely_with_tensor():
    solid = meshmod.triangulate_solid((1, 1), 8)
    t1 = cp.HomogenizedTensor(a_hat=0.01 * np.eye(2), a0=0.01, energy_discrepancy=0.0)
    t4 = cp.HomogenizedTensor(a_hat=0.04 * np.eye(2), a0=0.04, energy_discrepancy=0.0)
    u1 = solvers.solve_homogenized(solid, t1, 1.0).u0
    u4 = solvers.solve_homogenized(solid, t4, 1.0).u0
    assert np.allclose(u4, 0.25 * u1, atol=1e-10)


def test_homogenized_spectrum_invariant_under_weight_doubling():
    # a_hat -> 4 a_hat and a0 -> 4 a0 leave mu = eig(S, a0 M) unchanged
    solid = meshmod.triangulate_solid((1, 1), 16)
    t1 = cp.HomogenizedTensor(a_hat=0.01 * np.eye(2), a0=0.01, energy_discrepancy=0.0)
    t4 = cp.HomogenizedTensor(a_hat=0.04 * np.eye(2), a0=0.04, energy_discrepancy=0.0)
    mu1 = solvers.homogenized_spectrum(solid, t1, 2)
    mu4 = solvers.homogenized_spectrum(solid, t4, 2)
    assert np.allclose(mu1, mu4, rtol=1e-8)
    # for a_hat = a0 I the problem is the unit-square Dirichlet Laplacian
    assert abs(mu1[0] - 2.0 * np.pi ** 2) / (2.0 * np.pi ** 2) < 0.01


def test_spectrum_without_holes_matches_unit_square():
    solid = meshmod.triangulate_solid((1, 1), 32)
    lam = solvers.dirichlet_spectrum_eps(solid, fem.IDENTITY, 1)
    assert abs(lam[0] - 2.0 * np.pi ** 2) / (2.0 * np.pi ** 2) < 0.01


def test_perforation_raises_dirichlet_eigenvalues():
    # Dirichlet conditions on the hole boundaries shrink the domain, so the
    # principal eigenvalue must exceed the solid square's
    cm, w, dm, phi_eps = disk_domain(8, 2)
    lam_perf = solvers.dirichlet_spectrum_eps(dm, fem.IDENTITY, 1,
                                              shift=4.0 * 16.5)
    solid = meshmod.triangulate_solid((1, 1), 16)
    lam_solid = solvers.dirichlet_spectrum_eps(solid, fem.IDENTITY, 1)
    assert lam_perf[0] > lam_solid[0]


def test_spectrum_shift_does_not_change_values():
    cm, w, dm, phi_eps = disk_domain(8, 2)
    plain = solvers.dirichlet_spectrum_eps(dm, fem.IDENTITY, 2)
    shifted = solvers.dirichlet_spectrum_eps(dm, fem.IDENTITY, 2, shift=60.0)
    assert np.allclose(plain, shifted, rtol=1e-7)


def test_spectral_report_rejects_decreasing_values():
    with pytest.raises(FieldKindMismatch):
        solvers.SpectralReport(eps_values=["1/4"],
                               lambda_eps=[np.array([5.0, 4.0])],
                               lambda_bar=1.0, mu0=np.array([1.0]),
                               residuals=[np.array([0.1])], slope=1.0)
