"""Corrector cell problems, the homogenized tensor, and flux correctors.

The correctors chi_j solve the periodic degenerate cell problem

    int_{Y_*} phi^2 A (e_j + grad chi_j) . grad psi = 0   for all periodic psi,

with the zero-mean normalization int_{Y_*} chi_j = 0.  The homogenized
tensor is the quadrature evaluation of a_hat_ij = int phi^2 [A (e_j + grad
chi_j)]_i, cross-checked against the symmetric energy form (the two agree up
to the corrector solver tolerance by Galerkin orthogonality).  Flux
correctors are built on a hole-filled copy of the cell mesh with phi^2
extended by zero into the holes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .errors import GeometryViolation, MeanNotZero, MeshLineageMismatch
from .mesh import Mesh, fill_holes
from .weight import WeightField, extend_to_filled

EYE2 = np.eye(2)


@dataclass(frozen=True)
class CorrectorSet:
    """First-order correctors chi_1, chi_2 as columns of a (nv, 2) array."""

    chi: np.ndarray
    mean_values: np.ndarray
    mesh_token: str
    residuals: tuple[float, float]
    iterations: tuple[int, int]


@dataclass(frozen=True)
class HomogenizedTensor:
    """Effective matrix a_hat and the cell weight mass a0 = int phi^2."""

    a_hat: np.ndarray
    a0: float
    energy_discrepancy: float

    def __post_init__(self):
        scale = float(np.max(np.abs(self.a_hat)))
        if abs(self.a_hat[0, 1] - self.a_hat[1, 0]) > 1e-6 * max(scale, 1e-300):
            raise GeometryViolation(
                "homogenized matrix came out asymmetric beyond solver tolerance")
        if np.min(np.linalg.eigvalsh(0.5 * (self.a_hat + self.a_hat.T))) <= 0.0:
            raise GeometryViolation("homogenized matrix is not positive definite")


@dataclass(frozen=True)
class FluxCorrectors:
    """Flux correctors Phi_kij = d_k f_ij - d_i f_kj on the filled cell.

    `phi[k, i, j]` is the nodal field Phi_kij; `potentials[:, i, j]` the
    periodic Poisson potential f_ij; `b_quad[t, q, i, j]` the flux
    discrepancy b_ij at the quadrature points used for both the potential
    loads and the weak-divergence diagnostics.
    """

    phi: np.ndarray
    potentials: np.ndarray
    b_quad: np.ndarray
    b_means: np.ndarray
    mesh: Mesh
    residuals: np.ndarray

    def component(self, k: int, i: int, j: int) -> np.ndarray:
        return self.phi[k, i, j]


def _check_weight(cell_mesh: Mesh, w: WeightField):
    if w.mesh_token != cell_mesh.token:
        raise MeshLineageMismatch("weight was built on a different cell mesh")


def solve_correctors(cell_mesh: Mesh, A: fem.CoefficientField, w: WeightField,
                     solve_spec: fem.LinearSolveSpec | None = None) -> CorrectorSet:
    """Solve the two periodic corrector problems on the punctured cell.

    The weighted stiffness is folded onto the torus (periodic identification),
    constants are deflated out of CG, and the solution is recentered to the
    unweighted zero mean over Y_*.
    """
    _check_weight(cell_mesh, w)
    S = fem.assemble_weighted_stiffness(cell_mesh, A, w.values, power=2)
    Sf = fem.fold_matrix(S, cell_mesh.torus_map, cell_mesh.torus_size)
    spec = solve_spec or fem.LinearSolveSpec(deflation="constants")
    if spec.deflation is None:
        spec = fem.LinearSolveSpec(tolerance=spec.tolerance,
                                   max_iterations=spec.max_iterations,
                                   deflation="constants")
    M0 = fem.assemble_weighted_mass(cell_mesh, None, power=0)
    msum = np.asarray(M0.csr.sum(axis=1)).ravel()  # int psi_i over Y_*
    area = float(np.sum(msum))

    chi = np.empty((cell_mesh.n_vertices, 2))
    means = np.empty(2)
    residuals = []
    iterations = []
    for j in range(2):
        ej = EYE2[j]
        if A.matrix is not None:
            f_j = A.matrix @ ej
        else:
            def f_j(pts, _ej=ej):
                return np.asarray(A.func(pts)) @ _ej
        load = fem.assemble_load(cell_mesh, f_j, w.values, form="div_form", power=2)
        rhs = fem.fold_vector(load, cell_mesh.torus_map, cell_mesh.torus_size)
        x, res, iters = fem.solve_spd(Sf, rhs, spec)
        chi_j = fem.unfold_vector(x, cell_mesh.torus_map)
        chi_j = chi_j - (msum @ chi_j) / area
        chi[:, j] = chi_j
        means[j] = msum @ chi_j
        residuals.append(res)
        iterations.append(iters)
    return CorrectorSet(chi=chi, mean_values=means, mesh_token=cell_mesh.token,
                        residuals=(residuals[0], residuals[1]),
                        iterations=(iterations[0], iterations[1]))


def _flux_at_quadrature(mesh: Mesh, A: fem.CoefficientField, w_values: np.ndarray,
                        chi: np.ndarray):
    """phi^2 * A (e_j + grad chi_j) at quadrature points -> (nt, 3, 2, 2).

    Entry [t, q, i, j] is the i-th component of the weighted flux of the
    j-th corrected direction; also returns the phi^2 quadrature values.
    """
    area, grads, qpts = fem._geom(mesh)
    wq = (fem.QUAD_BC @ np.asarray(w_values, dtype=float)[mesh.triangles].T).T
    wq2 = wq * wq
    e_plus_grad = np.empty((mesh.n_triangles, 2, 2))  # [t, a, j]
    for j in range(2):
        e_plus_grad[:, :, j] = EYE2[j] + fem.element_gradients(mesh, chi[:, j])
    if A.matrix is not None:
        flux = np.einsum("ab,tbj->taj", A.matrix, e_plus_grad)
        flux = np.broadcast_to(flux[:, None, :, :],
                               (mesh.n_triangles, 3, 2, 2))
    else:
        Aq = A.at(qpts.reshape(-1, 2)).reshape(mesh.n_triangles, 3, 2, 2)
        flux = np.einsum("tqab,tbj->tqaj", Aq, e_plus_grad)
    weighted = wq2[:, :, None, None] * flux
    return weighted, wq2, e_plus_grad, area


def homogenized_matrix(cell_mesh: Mesh, A: fem.CoefficientField, w: WeightField,
                       correctors: CorrectorSet) -> HomogenizedTensor:
    """a_hat_ij = int_{Y_*} phi^2 [A (e_j + grad chi_j)]_i and a0 = int phi^2.

    The symmetric energy form int phi^2 A(e_j + grad chi_j).(e_i + grad chi_i)
    equals the formula in exact arithmetic (the difference tests the corrector
    equation with chi_i); the observed discrepancy is recorded.
    """
    _check_weight(cell_mesh, w)
    if correctors.mesh_token != cell_mesh.token:
        raise MeshLineageMismatch("correctors were solved on a different mesh")
    weighted, wq2, e_plus_grad, area = _flux_at_quadrature(
        cell_mesh, A, w.values, correctors.chi)
    a_hat = np.einsum("tqij,t->ij", weighted, area / 3.0)
    a_energy = np.einsum("tqaj,tai,t->ij", weighted, e_plus_grad, area / 3.0)
    a0 = float(np.einsum("tq,t->", wq2, area / 3.0))
    return HomogenizedTensor(a_hat=a_hat, a0=a0,
                             energy_discrepancy=float(np.max(np.abs(a_hat - a_energy))))


def flux_correctors(cell_mesh: Mesh, A: fem.CoefficientField, w: WeightField,
                    correctors: CorrectorSet, tensor: HomogenizedTensor,
                    solve_spec: fem.LinearSolveSpec | None = None) -> FluxCorrectors:
    """Antisymmetric potentials for the flux discrepancy b_ij on the full cell.

    b_ij = a_hat_ij - phi^2 [A (e_j + grad chi_j)]_i with phi extended by zero
    into the holes (hole elements carry b = a_hat there, and int_Y b_ij = 0
    because a_hat is the same quadrature sum).  Each potential solves the
    periodic Poisson problem (weak Delta f_ij = b_ij) with constants deflated;
    Phi_kij = d_k f_ij - d_i f_kj from periodic area-weighted nodal gradients.
    """
    _check_weight(cell_mesh, w)
    if correctors.mesh_token != cell_mesh.token:
        raise MeshLineageMismatch("correctors were solved on a different mesh")
    full = fill_holes(cell_mesh)
    w_full = extend_to_filled(w, full)
    chi_full = np.zeros((full.n_vertices, 2))
    chi_full[:full.base_vertices] = correctors.chi

    weighted, _, _, area = _flux_at_quadrature(full, A, w_full, chi_full)
    b_quad = tensor.a_hat[None, None, :, :] - weighted

    S0 = fem.assemble_weighted_stiffness(full, fem.IDENTITY, None, power=0)
    Sf = fem.fold_matrix(S0, full.torus_map, full.torus_size)
    spec = solve_spec or fem.LinearSolveSpec(deflation="constants")

    potentials = np.empty((full.n_vertices, 2, 2))
    grads_nodal = np.empty((2, 2, full.n_vertices, 2))
    b_means = np.empty((2, 2))
    residuals = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            b_means[i, j] = float(np.einsum("tq,t->", b_quad[:, :, i, j], area / 3.0))
            if abs(b_means[i, j]) > 1e-8:
                raise MeanNotZero(
                    f"int_Y b_{i + 1}{j + 1} = {b_means[i, j]:.3e} is not zero; "
                    "homogenized matrix inconsistent with the correctors")
            load = fem.load_from_quadrature(full, b_quad[:, :, i, j])
            rhs = fem.fold_vector(-load, full.torus_map, full.torus_size)
            x, res, _ = fem.solve_spd(Sf, rhs, spec)
            f_ij = fem.unfold_vector(x, full.torus_map)
            potentials[:, i, j] = f_ij
            grads_nodal[i, j] = fem.nodal_gradient(full, f_ij, periodic=True)
            residuals[i, j] = res

    phi = np.empty((2, 2, 2, full.n_vertices))
    for k in range(2):
        for i in range(2):
            for j in range(2):
                phi[k, i, j] = grads_nodal[i, j][:, k] - grads_nodal[k, j][:, i]
    return FluxCorrectors(phi=phi, potentials=potentials, b_quad=b_quad,
                          b_means=b_means, mesh=full, residuals=residuals)


# fixed smooth periodic test functions for the weak-divergence diagnostic;
# (function, gradient) pairs on the torus
_TEST_MODES = (
    (lambda p: np.sin(2 * np.pi * p[:, 0]),
     lambda p: np.column_stack([2 * np.pi * np.cos(2 * np.pi * p[:, 0]),
                                np.zeros(p.shape[0])])),
    (lambda p: np.cos(2 * np.pi * p[:, 1]),
     lambda p: np.column_stack([np.zeros(p.shape[0]),
                                -2 * np.pi * np.sin(2 * np.pi * p[:, 1])])),
    (lambda p: np.sin(2 * np.pi * (p[:, 0] + p[:, 1])),
     lambda p: np.column_stack([2 * np.pi * np.cos(2 * np.pi * (p[:, 0] + p[:, 1])),
                                2 * np.pi * np.cos(2 * np.pi * (p[:, 0] + p[:, 1]))])),
    (lambda p: np.cos(2 * np.pi * p[:, 0]) * np.sin(2 * np.pi * p[:, 1]),
     lambda p: np.column_stack([
         -2 * np.pi * np.sin(2 * np.pi * p[:, 0]) * np.sin(2 * np.pi * p[:, 1]),
         2 * np.pi * np.cos(2 * np.pi * p[:, 0]) * np.cos(2 * np.pi * p[:, 1])])),
    (lambda p: np.sin(4 * np.pi * p[:, 0]) * np.cos(2 * np.pi * p[:, 1]),
     lambda p: np.column_stack([
         4 * np.pi * np.cos(4 * np.pi * p[:, 0]) * np.cos(2 * np.pi * p[:, 1]),
         -2 * np.pi * np.sin(4 * np.pi * p[:, 0]) * np.sin(2 * np.pi * p[:, 1])])),
)


def flux_divergence_residual(flux: FluxCorrectors) -> float:
    """max over fixed periodic test modes of |int Phi_kij d_k psi + int b_ij psi|,
    normalized by the H^1 norm of psi.  Shrinks like O(h) under refinement."""
    mesh = flux.mesh
    area, _, qpts = fem._geom(mesh)
    flat = qpts.reshape(-1, 2)
    wq = (area / 3.0)
    worst = 0.0
    for func, grad in _TEST_MODES:
        psi = func(flat).reshape(-1, 3)
        gpsi = grad(flat).reshape(-1, 3, 2)
        h1 = np.sqrt(float(np.einsum("tq,t->", psi ** 2, wq))
                     + float(np.einsum("tqa,t->", gpsi ** 2, wq)))
        for i in range(2):
            for j in range(2):
                phi_q = np.empty((mesh.n_triangles, 3, 2))
                for k in range(2):
                    phi_q[:, :, k] = (fem.QUAD_BC @
                                      flux.phi[k, i, j][mesh.triangles].T).T
                term1 = float(np.einsum("tqk,tqk,t->", phi_q, gpsi, wq))
                term2 = float(np.einsum("tq,tq,t->", flux.b_quad[:, :, i, j], psi, wq))
                worst = max(worst, abs(term1 + term2) / h1)
    return worst
