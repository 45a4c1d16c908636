"""Degenerate weights on the punctured cell.

Two constructions of the periodic weight phi: an analytic distance-type
weight (distance to the holes, capped at c0/2 through a monotone C^1 blend)
and the principal eigenfunction of -div(A grad .) with Dirichlet data on the
hole boundaries and periodic conditions on the cell faces.  Both vanish
exactly at hole-boundary vertices and carry bit-identical values on paired
periodic vertices, so domain meshes obtained by tiling inherit the weight
through a pure index map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .errors import EigenIterationDivergence, FieldKindMismatch, MeshLineageMismatch
from .geometry import CellGeometry, PerforatedDomainSpec, distance_to_holes
from .mesh import Mesh


@dataclass(frozen=True)
class WeightField:
    """Nodal weight phi on a cell mesh.

    comparability holds against the capped distance min(dist(x, T), c0/2):
    c * ref <= phi <= C * ref at every vertex where ref > 0 (the raw distance
    cannot support a two-sided bound once phi is capped).
    """

    values: np.ndarray
    mode: str                    # "distance" | "ground_state"
    mesh_token: str
    comparability: tuple[float, float]
    lambda_bar: float | None = None
    normalized: bool = False
    div_bound: float | None = None   # L^4 bound on div(A grad phi), ground state only

    @property
    def cap(self) -> float | None:
        return None


def _blend(dist: np.ndarray, c0: float) -> np.ndarray:
    """Distance profile: identity below c0/4, constant c0/2 above c0/2.

    The middle section is the monotone cubic Hermite segment matching value
    and slope at both ends (value c0/4 / slope 1 at c0/4, value c0/2 /
    slope 0 at c0/2), so the profile is C^1, nondecreasing, and reaches the
    cap value exactly.  On the middle section the profile stays within a
    factor 1.091 of the capped distance (max of 1 + s^2(1-s)/(1+s)).
    """
    a = 0.25 * c0
    b = 0.5 * c0
    t = np.asarray(dist, dtype=float)
    out = np.where(t >= b, b, t)
    mid = (t > a) & (t < b)
    if np.any(mid):
        s = (t[mid] - a) / (b - a)
        h00 = (2.0 * s - 3.0) * s * s + 1.0
        h10 = ((s - 2.0) * s + 1.0) * s
        h01 = (3.0 - 2.0 * s) * s * s
        out[mid] = h00 * a + h10 * (b - a) + h01 * b
    return out


def _canonicalize_on_torus(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Copy each torus class's value from its lowest-index representative.

    Forces bitwise equality across periodic pairs, which floating-point
    distance evaluations at +1/2 vs -1/2 would not guarantee on their own.
    """
    rep = np.full(mesh.torus_size, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(rep, mesh.torus_map, np.arange(mesh.n_vertices))
    return values[rep][mesh.torus_map]


def _comparability(mesh: Mesh, cell: CellGeometry, values: np.ndarray):
    ref = np.minimum(distance_to_holes(mesh.vertices, cell, periodic=True),
                     0.5 * cell.c0)
    ok = ref > 1e-12 * cell.c0
    if not np.any(ok):
        return (0.0, 0.0)
    ratios = values[ok] / ref[ok]
    return (float(np.min(ratios)), float(np.max(ratios)))


def distance_weight(cell: CellGeometry, cell_mesh: Mesh) -> WeightField:
    """Analytic distance-type weight phi(y) ~ dist(y, T), capped at c0/2.

    An empty cell yields the constant c0/2.  Values at hole-boundary vertices
    are exactly zero and periodic traces are exactly equal.
    """
    _require_cell_mesh(cell, cell_mesh)
    dist = distance_to_holes(cell_mesh.vertices, cell, periodic=True)
    values = _blend(dist, cell.c0)
    values[cell_mesh.hole_boundary_vertices()] = 0.0
    values = _canonicalize_on_torus(cell_mesh, values)
    return WeightField(values=values, mode="distance", mesh_token=cell_mesh.token,
                       comparability=_comparability(cell_mesh, cell, values))


def ground_state_weight(cell: CellGeometry, cell_mesh: Mesh,
                        A: fem.CoefficientField = fem.IDENTITY) -> WeightField:
    """Principal eigenfunction of -div(A grad .), Dirichlet on the holes,
    periodic across the cell faces, normalized to ||phi||_{L^2(Y_*)} = 1.

    Returns the eigenvalue lambda_bar alongside; an empty cell degenerates to
    lambda_bar = 0 with phi identically 1.  Because -div(A grad phi) =
    lambda_bar * phi, the divergence of the flux is bounded; its L^4 norm
    lambda_bar * ||phi||_{L^4} is recorded as div_bound.
    """
    _require_cell_mesh(cell, cell_mesh)
    ones = np.ones(cell_mesh.n_vertices)
    if cell.empty:
        values = ones.copy()
        return WeightField(values=values, mode="ground_state",
                           mesh_token=cell_mesh.token,
                           comparability=_comparability(cell_mesh, cell, values),
                           lambda_bar=0.0, normalized=True, div_bound=0.0)

    S = fem.assemble_weighted_stiffness(cell_mesh, A, None, power=0)
    M = fem.assemble_weighted_mass(cell_mesh, None, power=0)
    Sf = fem.fold_matrix(S, cell_mesh.torus_map, cell_mesh.torus_size)
    Mf = fem.fold_matrix(M, cell_mesh.torus_map, cell_mesh.torus_size)
    holes = np.unique(cell_mesh.torus_map[cell_mesh.hole_boundary_vertices()])
    lam, vecs = fem.smallest_eigenpairs(Sf, Mf, k=1, dirichlet=holes,
                                        value_tol=1e-10)
    lambda_bar = float(lam[0])
    phi = fem.unfold_vector(vecs[:, 0], cell_mesh.torus_map)
    if float(M.csr @ ones @ phi) < 0.0:
        phi = -phi
    if np.min(phi) < -1e-8 * np.max(phi):
        raise EigenIterationDivergence(
            "principal eigenfunction changed sign; iteration converged to a "
            "higher mode")
    np.clip(phi, 0.0, None, out=phi)
    phi[cell_mesh.hole_boundary_vertices()] = 0.0
    # the folded solve already M-normalizes; renormalize after the clip
    mass = float(phi @ (M.csr @ phi))
    phi /= np.sqrt(mass)
    phi = _canonicalize_on_torus(cell_mesh, phi)
    div_bound = lambda_bar * fem.weighted_norm(cell_mesh, phi, ones, 4.0)
    return WeightField(values=phi, mode="ground_state", mesh_token=cell_mesh.token,
                       comparability=_comparability(cell_mesh, cell, phi),
                       lambda_bar=lambda_bar, normalized=True, div_bound=div_bound)


def evaluate_weight_on_domain(w: WeightField, spec: PerforatedDomainSpec,
                              domain_mesh: Mesh) -> np.ndarray:
    """phi_eps(x) = phi(x/eps) on a tiled domain mesh, by exact index mapping."""
    lineage = domain_mesh.lineage
    if lineage is None:
        raise MeshLineageMismatch("domain mesh carries no tiling lineage")
    if lineage.cell_token != w.mesh_token:
        raise MeshLineageMismatch(
            "weight was built on a different cell mesh than this domain mesh")
    if lineage.spec.cell.signature() != spec.cell.signature() \
            or lineage.spec.epsilon != spec.epsilon \
            or lineage.spec.omega != spec.omega:
        raise MeshLineageMismatch("domain mesh was tiled for a different domain spec")
    return w.values[lineage.vertex_source]


def extend_to_filled(w: WeightField, full_mesh: Mesh) -> np.ndarray:
    """Weight values on a hole-filled cell mesh: phi extended by zero into T."""
    if full_mesh.kind != "cell_full":
        raise FieldKindMismatch("extension target must be a hole-filled cell mesh")
    if w.values.shape[0] != full_mesh.base_vertices:
        raise MeshLineageMismatch(
            "filled mesh was not produced from the weight's cell mesh")
    out = np.zeros(full_mesh.n_vertices)
    out[:full_mesh.base_vertices] = w.values
    return out


def _require_cell_mesh(cell: CellGeometry, cell_mesh: Mesh):
    if cell_mesh.kind not in ("cell", "cell_full"):
        raise FieldKindMismatch(f"weights live on cell meshes, got {cell_mesh.kind!r}")
    if cell_mesh.cell is None or cell_mesh.cell.signature() != cell.signature():
        raise MeshLineageMismatch("cell mesh does not belong to this cell geometry")
