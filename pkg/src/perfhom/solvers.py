"""Boundary-value and eigenvalue solves on perforated and solid meshes.

Three problems share the assembly layer:

* the degenerate problem -div(phi_eps^2 A_eps grad u) with Dirichlet data
  only on the outer boundary (the weight degenerates at the holes, so no
  condition is imposed there),
* the constant-coefficient homogenized problem on the unperforated domain,
* the Dirichlet spectra of the unweighted operator on the perforated domain
  and of the homogenized operator, whose combination exhibits the
  eps^{-2} lambda_bar + mu eigenvalue split.

The periodic coefficient A_eps(x) = A(x/eps) is never resampled in physical
coordinates: domain meshes remember which cell triangle each element came
from, so quadrature values are taken once on the cell mesh and indexed.
That makes the coefficient exactly periodic across cells at the discrete
level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .errors import FieldKindMismatch, MeshLineageMismatch
from .fem import CoefficientField, LinearSolveSpec, SparseMatrix
from .mesh import Mesh
from .weight import WeightField


@dataclass(frozen=True)
class EpsSolution:
    """Solution of the degenerate problem at one epsilon."""

    mesh: Mesh
    u: np.ndarray
    phi_eps: np.ndarray
    epsilon: float
    form: str
    energy: float              # int phi_eps^2 |grad u|^2
    energy_constant: float | None  # ||phi grad u||_2 / (||f||_2 + ||F||_2)
    residual: float
    iterations: int


@dataclass(frozen=True)
class HomogenizedSolution:
    mesh: Mesh
    u0: np.ndarray
    recovered_gradient: np.ndarray  # (nv, 2), area-weighted element average
    residual: float
    iterations: int


@dataclass(frozen=True)
class SpectralReport:
    """Eigenvalue split lambda_eps ~ eps^-2 lambda_bar + mu."""

    eps_values: list
    lambda_eps: list            # per eps: array of the first k values
    lambda_bar: float
    mu0: np.ndarray             # first k homogenized values
    residuals: list             # per eps: |lambda_eps^j - eps^-2 lambda_bar - mu0^j|
    slope: float                # fitted slope of log r_1 vs log eps

    def __post_init__(self):
        for vals in list(self.lambda_eps) + [self.mu0]:
            v = np.asarray(vals)
            if v.size > 1 and np.any(np.diff(v) < -1e-9 * max(1.0, abs(v[-1]))):
                raise FieldKindMismatch("eigenvalue list is not nondecreasing")


def _coefficient_coords(mesh: Mesh, A: CoefficientField):
    """Cell-local quadrature coordinates for a periodic coefficient.

    Returns None for constant coefficients (no sampling needed).  For a
    periodic A on a tiled domain mesh, returns the cell mesh's own
    quadrature points indexed by each domain triangle's source triangle --
    the exact cell-map preimages, with no floating-point folding.
    """
    if A.func is None:
        return None
    if mesh.lineage is None:
        raise MeshLineageMismatch(
            "periodic coefficient requires a tiled domain mesh with lineage")
    _, _, cell_qpts = fem._geom(mesh.lineage.cell_mesh)
    return cell_qpts[mesh.lineage.triangle_source]


def _field_norm(mesh: Mesh, f, p: float, vector: bool = False) -> float:
    """L^p norm of an analytic right-hand-side field, centroid rule."""
    if f is None:
        return 0.0
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    if vector:
        vals = fem._eval_vector(f, centroids)
        mag = np.sqrt(np.einsum("ij,ij->i", vals, vals))
    else:
        mag = np.abs(fem._eval_scalar(f, centroids))
    area, _, _ = fem._geom(mesh)
    return float(np.einsum("t,t->", mag ** p, area) ** (1.0 / p))


def solve_eps_problem(domain_mesh: Mesh, A: CoefficientField, phi_eps: np.ndarray,
                      rhs, solve_spec: LinearSolveSpec | None = None) -> EpsSolution:
    """Solve the degenerate problem on a perforated domain mesh.

    ``rhs`` is a tuple (form, f, F) with form "weighted_source" (entry
    int phi f psi) or "div_form" (entry -int phi f . grad psi + int F psi).
    Dirichlet rows are eliminated at outer-boundary vertices only; hole
    boundaries carry no condition.
    """
    form, f, F = rhs
    phi_eps = np.asarray(phi_eps, dtype=float).reshape(-1)
    if phi_eps.size != domain_mesh.n_vertices:
        raise FieldKindMismatch("phi_eps length does not match the domain mesh")
    coords = _coefficient_coords(domain_mesh, A)
    S = fem.assemble_weighted_stiffness(domain_mesh, A, phi_eps, power=2,
                                        coefficient_coords=coords)
    load = fem.assemble_load(domain_mesh, f, phi_eps, form, F=F)
    fixed = domain_mesh.outer_dirichlet_vertices()
    u, res, iters = fem.solve_spd(S, load, solve_spec, dirichlet=fixed)

    grad_norm = fem.weighted_norm(domain_mesh, u, phi_eps, 2.0, gradient=True)
    if form == "weighted_source":
        denom = _field_norm(domain_mesh, f, 2.0)
    else:
        denom = (_field_norm(domain_mesh, f, 2.0, vector=True)
                 + _field_norm(domain_mesh, F, 2.0))
    constant = float(grad_norm / denom) if denom > 0.0 else None

    epsilon = (float(domain_mesh.lineage.spec.epsilon)
               if domain_mesh.lineage is not None else float("nan"))
    return EpsSolution(mesh=domain_mesh, u=u, phi_eps=phi_eps, epsilon=epsilon,
                       form=form, energy=float(grad_norm ** 2),
                       energy_constant=constant, residual=res, iterations=iters)


def make_F_eps(cell_mesh: Mesh, weight: WeightField, epsilon: float, f):
    """Right-hand side F_eps(x) = phi_eps(x) f(x), extended by zero.

    phi_eps is evaluated by folding x into the unit cell and interpolating
    the cell weight there; points falling inside a hole get 0, which is the
    zero extension the homogenized problem expects.
    """
    if weight.mesh_token != cell_mesh.token:
        raise MeshLineageMismatch("weight was built on a different cell mesh")
    eps = float(epsilon)

    def F(points):
        pts = np.asarray(points, dtype=float)
        y = pts / eps
        # cells are centered at (k + 1/2) eps: fold x/eps into [0,1), recenter
        y = y - np.floor(y) - 0.5
        phi = cell_mesh.interpolate(weight.values, y, fill_value=0.0)
        return phi * fem._eval_scalar(f, pts)

    return F


def _tensor_field(tensor) -> CoefficientField:
    # The measured a_hat is symmetric only to solver tolerance (~1e-13);
    # the constant-coefficient problems use its symmetric part.
    m = np.asarray(tensor.a_hat, dtype=float)
    return CoefficientField.constant(0.5 * (m + m.T))


def solve_homogenized(solid_mesh: Mesh, tensor, F_eps,
                      solve_spec: LinearSolveSpec | None = None) -> HomogenizedSolution:
    """Constant-coefficient solve -div(A_hat grad u0) = F_eps, u0 = 0 on the boundary."""
    A = _tensor_field(tensor)
    S = fem.assemble_weighted_stiffness(solid_mesh, A, None, power=0)
    load = fem.assemble_load(solid_mesh, F_eps, None, "weighted_source", power=0)
    fixed = solid_mesh.outer_dirichlet_vertices()
    u0, res, iters = fem.solve_spd(S, load, solve_spec, dirichlet=fixed)
    grad = fem.nodal_gradient(solid_mesh, u0)
    return HomogenizedSolution(mesh=solid_mesh, u0=u0, recovered_gradient=grad,
                               residual=res, iterations=iters)


def dirichlet_spectrum_eps(domain_mesh: Mesh, A: CoefficientField, k: int,
                           shift: float = 0.0) -> np.ndarray:
    """First k Dirichlet eigenvalues of the unweighted operator on Omega_eps.

    Unlike the degenerate problem, the classical spectrum constrains the
    hole boundaries as well: Dirichlet on all of dOmega_eps.  For small eps
    the whole low spectrum sits near eps^-2 lambda_bar; passing a shift a
    little below that offset keeps the inverse iteration contracting.
    """
    coords = _coefficient_coords(domain_mesh, A)
    S = fem.assemble_weighted_stiffness(domain_mesh, A, None, power=0,
                                        coefficient_coords=coords)
    M = fem.assemble_weighted_mass(domain_mesh, None, power=0)
    fixed = np.concatenate([domain_mesh.outer_dirichlet_vertices(),
                            domain_mesh.hole_boundary_vertices()])
    values, _ = fem.smallest_eigenpairs(S, M, k, dirichlet=fixed, shift=shift)
    return values


def homogenized_spectrum(solid_mesh: Mesh, tensor, k: int) -> np.ndarray:
    """First k eigenvalues of -div(A_hat grad w) = mu a0 w, Dirichlet on the boundary.

    The cell average a0 = int phi^2 weights the mass; with it, the
    eigenvalue split residual lambda_eps - eps^-2 lambda_bar - mu is O(eps).
    """
    A = _tensor_field(tensor)
    S = fem.assemble_weighted_stiffness(solid_mesh, A, None, power=0)
    M0 = fem.assemble_weighted_mass(solid_mesh, None, power=0)
    M = SparseMatrix((M0.csr * float(tensor.a0)).tocsr())
    fixed = solid_mesh.outer_dirichlet_vertices()
    values, _ = fem.smallest_eigenpairs(S, M, k, dirichlet=fixed)
    return values
