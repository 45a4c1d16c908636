"""P1 finite elements: assembly, sparse solves, eigenpairs, weighted norms.

Quadrature is the 3-point edge-midpoint rule, exact for quadratics.  Its
nodes never coincide with triangle vertices, so elements touching a
degenerate-weight boundary still contribute positive energy: the weighted
stiffness stays positive definite on the unconstrained space (modulo
constants on periodic meshes) without any boundary condition on the holes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (CGNoConvergence, EigenIterationDivergence,
                     FieldKindMismatch, GeometryViolation)
from .mesh import Mesh

# barycentric coordinates of the edge midpoints; row q gives the three P1
# basis values at quadrature point q, each point has weight area/3
QUAD_BC = np.array([[0.5, 0.5, 0.0],
                    [0.0, 0.5, 0.5],
                    [0.5, 0.0, 0.5]])


@dataclass
class CoefficientField:
    """Symmetric uniformly elliptic coefficient A(y) on the cell.

    Either a constant 2x2 matrix or a Y-periodic callable mapping an (m, 2)
    array of points to (m, 2, 2) matrices.  `mu` is the ellipticity constant.
    """

    matrix: np.ndarray | None = None
    func: object | None = None
    mu: float = 1.0

    @staticmethod
    def constant(matrix) -> "CoefficientField":
        m = np.asarray(matrix, dtype=float).reshape(2, 2)
        if not np.allclose(m, m.T, atol=1e-14):
            raise GeometryViolation("coefficient matrix must be symmetric")
        ev = np.linalg.eigvalsh(m)
        if ev[0] <= 0:
            raise GeometryViolation("coefficient matrix must be positive definite")
        return CoefficientField(matrix=m, mu=float(ev[0]))

    @staticmethod
    def periodic(func, mu: float) -> "CoefficientField":
        # sample on a grid to catch non-symmetric or non-elliptic callables early
        t = (np.arange(17) / 17.0) - 0.5
        xx, yy = np.meshgrid(t, t)
        vals = np.asarray(func(np.column_stack([xx.ravel(), yy.ravel()])))
        if vals.shape != (t.size * t.size, 2, 2):
            raise FieldKindMismatch("coefficient callable must return (m, 2, 2) arrays")
        if not np.allclose(vals, np.swapaxes(vals, 1, 2), atol=1e-12):
            raise GeometryViolation("coefficient callable must be symmetric")
        ev = np.linalg.eigvalsh(vals)
        if np.min(ev) < mu - 1e-12:
            raise GeometryViolation(
                f"coefficient callable violates ellipticity mu={mu} (min eig {np.min(ev):.3g})")
        return CoefficientField(func=func, mu=float(mu))

    def at(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        if self.matrix is not None:
            return np.broadcast_to(self.matrix, (pts.shape[0], 2, 2))
        return np.asarray(self.func(pts))

    @property
    def is_identity(self) -> bool:
        return self.matrix is not None and np.array_equal(self.matrix, np.eye(2))


IDENTITY = CoefficientField.constant(np.eye(2))


class SparseMatrix:
    """CSR matrix plus a symmetry flag; thin wrapper over scipy CSR storage."""

    def __init__(self, csr: sp.csr_matrix, symmetric: bool = True):
        self.csr = csr
        self.symmetric = symmetric

    @property
    def shape(self):
        return self.csr.shape

    def matvec(self, x):
        return self.csr @ x

    def diagonal(self):
        return self.csr.diagonal()

    def toarray(self):
        return self.csr.toarray()

    def submatrix(self, idx: np.ndarray) -> "SparseMatrix":
        return SparseMatrix(self.csr[idx][:, idx].tocsr(), self.symmetric)


@dataclass
class LinearSolveSpec:
    """Settings for the conjugate-gradient solver."""

    tolerance: float = 1e-10
    max_iterations: int = 50000
    deflation: str | np.ndarray | None = None  # None | "constants" | explicit vectors

    def __post_init__(self):
        if not 0.0 < self.tolerance < 1.0:
            raise GeometryViolation(
                f"solver tolerance must lie in (0, 1), got {self.tolerance}")
        if self.max_iterations < 1:
            raise GeometryViolation("solver needs max_iterations >= 1")


def _geom(mesh: Mesh):
    """Per-element areas, P1 gradients, and quadrature points (cached)."""
    if mesh._fem_cache is None:
        p = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1]
        if np.any(det <= 0):
            raise GeometryViolation("mesh contains a non-CCW or degenerate triangle")
        area = 0.5 * det
        grads = np.empty((p.shape[0], 3, 2))
        grads[:, 1, 0] = d2[:, 1] / det
        grads[:, 1, 1] = -d2[:, 0] / det
        grads[:, 2, 0] = -d1[:, 1] / det
        grads[:, 2, 1] = d1[:, 0] / det
        grads[:, 0] = -grads[:, 1] - grads[:, 2]
        qpts = np.einsum("qi,tix->tqx", QUAD_BC, p)
        mesh._fem_cache = (area, grads, qpts)
    return mesh._fem_cache


def _quad_weight_values(mesh, w, power, floor=0.0):
    """(nt, 3) array of w^power at the quadrature points, or None for power 0.

    The nodal weight is interpolated first and raised to the power afterwards,
    so stiffness, loads, and the homogenized-tensor quadrature all see the
    identical w^2 values (this is what makes the discrete energy identity and
    the w -> 2w covariance exact).
    """
    if power not in (0, 2):
        raise GeometryViolation(f"weight power must be 0 or 2, got {power}")
    if power == 0:
        return None
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.size != mesh.n_vertices:
        raise FieldKindMismatch("weight field does not match the mesh")
    wq = (QUAD_BC @ w[mesh.triangles].T).T  # (nt, 3)
    if floor:
        wq = np.maximum(wq, floor)
    return wq ** 2


def _coefficient_at_quadrature(mesh, A: CoefficientField, coefficient_coords):
    area, grads, qpts = _geom(mesh)
    if A.matrix is not None:
        return None  # constant path handled separately
    pts = coefficient_coords if coefficient_coords is not None else qpts
    return A.at(pts.reshape(-1, 2)).reshape(mesh.n_triangles, 3, 2, 2)


def _scatter_symmetric(mesh, local) -> SparseMatrix:
    """Assemble element matrices into a CSR matrix with exact symmetry.

    Only global (row <= col) entries are accumulated (the element matrices
    are symmetrized bitwise first), then the strict upper triangle is
    mirrored, so a_ij == a_ji holds exactly.
    """
    # bitwise-symmetric element matrices
    for i in range(3):
        for j in range(i + 1, 3):
            local[:, j, i] = local[:, i, j]
    tri = mesh.triangles
    nv = mesh.n_vertices
    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            r, c = tri[:, i], tri[:, j]
            keep = r <= c
            rows.append(r[keep])
            cols.append(c[keep])
            vals.append(local[keep, i, j])
    upper = sp.coo_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(nv, nv)).tocsr()
    strict = sp.triu(upper, k=1)
    return SparseMatrix((upper + strict.T).tocsr(), symmetric=True)


def assemble_weighted_stiffness(mesh: Mesh, A: CoefficientField, w, power: int,
                                coefficient_coords: np.ndarray | None = None,
                                floor: float = 0.0) -> SparseMatrix:
    """Stiffness matrix of v -> -div(w^power A grad v).

    `coefficient_coords` overrides the points where a periodic coefficient is
    sampled (used to sample A(x/eps) exactly through the cell map on tiled
    domain meshes).  `floor` clips the interpolated weight from below before
    squaring — a conditioning experiment knob, 0 (off) by default.
    """
    area, grads, _ = _geom(mesh)
    wq2 = _quad_weight_values(mesh, w, power, floor)
    Aq = _coefficient_at_quadrature(mesh, A, coefficient_coords)
    if Aq is None:
        Ag = np.einsum("ab,tjb->tja", A.matrix, grads)
        base = np.einsum("tia,tja->tij", grads, Ag)
        if wq2 is None:
            local = base * area[:, None, None]
        else:
            local = base * (area * wq2.sum(axis=1) / 3.0)[:, None, None]
    else:
        Ag = np.einsum("tqab,tjb->tqja", Aq, grads)
        if wq2 is None:
            local = np.einsum("tia,tqja->tij", grads, Ag) * (area / 3.0)[:, None, None]
        else:
            local = np.einsum("tia,tq,tqja->tij", grads, wq2, Ag) * (area / 3.0)[:, None, None]
    return _scatter_symmetric(mesh, local)


def assemble_weighted_mass(mesh: Mesh, w, power: int) -> SparseMatrix:
    """Mass matrix with weight w^power (the spectral transform uses power 2)."""
    area, _, _ = _geom(mesh)
    wq2 = _quad_weight_values(mesh, w, power)
    if wq2 is None:
        base = np.einsum("qi,qj->ij", QUAD_BC, QUAD_BC)
        local = base[None, :, :] * (area / 3.0)[:, None, None]
    else:
        local = np.einsum("tq,qi,qj->tij", wq2, QUAD_BC, QUAD_BC) * (area / 3.0)[:, None, None]
    return _scatter_symmetric(mesh, np.ascontiguousarray(local))


def _eval_scalar(f, pts):
    if callable(f):
        v = np.asarray(f(pts), dtype=float)
        if v.shape != (pts.shape[0],):
            raise FieldKindMismatch("scalar field callable returned a non-scalar shape")
        return v
    v = np.asarray(f, dtype=float)
    if v.ndim != 0:
        raise FieldKindMismatch("expected a scalar (or scalar callable) field")
    return np.full(pts.shape[0], float(v))


def _eval_vector(f, pts):
    if callable(f):
        v = np.asarray(f(pts), dtype=float)
        if v.shape != (pts.shape[0], 2):
            raise FieldKindMismatch("vector field callable returned a non-vector shape")
        return v
    v = np.asarray(f, dtype=float)
    if v.shape != (2,):
        raise FieldKindMismatch("expected a 2-vector (or vector callable) field")
    return np.broadcast_to(v, (pts.shape[0], 2))


def assemble_load(mesh: Mesh, f, w, form: str, F=None, power: int = 1) -> np.ndarray:
    """Right-hand-side vector.

    weighted_source: entry i = int w^power f psi_i              (scalar f)
    div_form:        entry i = -int w^power f . grad psi_i + int F psi_i  (vector f)

    power = 1 matches the equations' phi_eps terms; the corrector load uses
    power = 2 so its w^2 values coincide with the stiffness quadrature;
    power = 0 drops the weight (w may be None).
    """
    if power not in (0, 1, 2):
        raise GeometryViolation(f"load weight power must be 0, 1 or 2, got {power}")
    area, grads, qpts = _geom(mesh)
    if power == 0:
        wq = np.ones((mesh.n_triangles, 3))
    else:
        w = np.asarray(w, dtype=float).reshape(-1)
        if w.size != mesh.n_vertices:
            raise FieldKindMismatch("weight field does not match the mesh")
        wq = (QUAD_BC @ w[mesh.triangles].T).T  # (nt, 3)
        if power == 2:
            wq = wq * wq
    flat = qpts.reshape(-1, 2)
    load = np.zeros(mesh.n_vertices)
    if form == "weighted_source":
        if F is not None:
            raise FieldKindMismatch("weighted_source form takes no F term")
        fq = _eval_scalar(f, flat).reshape(-1, 3)
        contrib = np.einsum("tq,tq,qi->ti", wq, fq, QUAD_BC) * (area / 3.0)[:, None]
    elif form == "div_form":
        fq = _eval_vector(f, flat).reshape(-1, 3, 2)
        contrib = -np.einsum("tq,tqa,tia->ti", wq, fq, grads) * (area / 3.0)[:, None]
        if F is not None:
            Fq = _eval_scalar(F, flat).reshape(-1, 3)
            contrib += np.einsum("tq,qi->ti", Fq, QUAD_BC) * (area / 3.0)[:, None]
    else:
        raise FieldKindMismatch(f"unknown load form {form!r}")
    np.add.at(load, mesh.triangles.ravel(), contrib.ravel())
    return load


def load_from_quadrature(mesh: Mesh, quad_values: np.ndarray) -> np.ndarray:
    """Load vector for an integrand given by its quadrature-point values:
    entry i = sum_t (area_t/3) sum_q quad_values[t, q] psi_i(q)."""
    area, _, _ = _geom(mesh)
    vals = np.asarray(quad_values, dtype=float)
    if vals.shape != (mesh.n_triangles, 3):
        raise FieldKindMismatch("quadrature values must have shape (nt, 3)")
    contrib = np.einsum("tq,qi->ti", vals, QUAD_BC) * (area / 3.0)[:, None]
    load = np.zeros(mesh.n_vertices)
    np.add.at(load, mesh.triangles.ravel(), contrib.ravel())
    return load


def element_gradients(mesh: Mesh, field: np.ndarray) -> np.ndarray:
    """Per-element (constant) gradient of a nodal P1 field, shape (nt, 2)."""
    _, grads, _ = _geom(mesh)
    f = np.asarray(field, dtype=float).reshape(-1)
    if f.size != mesh.n_vertices:
        raise FieldKindMismatch("field length does not match the mesh")
    return np.einsum("ti,tia->ta", f[mesh.triangles], grads)


def nodal_gradient(mesh: Mesh, field: np.ndarray, periodic: bool = False) -> np.ndarray:
    """Recovered gradient: area-weighted average of element gradients at nodes.

    With `periodic` the averaging runs over torus classes, so a face vertex
    sees the elements on both sides of the seam and the recovered field is
    exactly periodic.
    """
    area, _, _ = _geom(mesh)
    g = element_gradients(mesh, field)
    if periodic:
        if mesh.torus_map is None:
            raise FieldKindMismatch("periodic gradient recovery needs a cell mesh")
        idx = mesh.torus_map[mesh.triangles]
        size = mesh.torus_size
    else:
        idx = mesh.triangles
        size = mesh.n_vertices
    num = np.zeros((size, 2))
    den = np.zeros(size)
    wg = g * area[:, None]
    for corner in range(3):
        np.add.at(num, idx[:, corner], wg)
        np.add.at(den, idx[:, corner], area)
    den[den == 0.0] = 1.0
    out = num / den[:, None]
    if periodic:
        out = out[mesh.torus_map]
    return out


# ---------------------------------------------------------------------------
# periodic folding
# ---------------------------------------------------------------------------

def fold_matrix(M: SparseMatrix, torus_map: np.ndarray, torus_size: int) -> SparseMatrix:
    coo = M.csr.tocoo()
    folded = sp.coo_matrix((coo.data, (torus_map[coo.row], torus_map[coo.col])),
                           shape=(torus_size, torus_size)).tocsr()
    return SparseMatrix(folded, M.symmetric)


def fold_vector(v: np.ndarray, torus_map: np.ndarray, torus_size: int) -> np.ndarray:
    out = np.zeros(torus_size)
    np.add.at(out, torus_map, v)
    return out


def unfold_vector(v: np.ndarray, torus_map: np.ndarray) -> np.ndarray:
    return v[torus_map]


# ---------------------------------------------------------------------------
# linear solver: Jacobi-preconditioned conjugate gradients with deflation
# ---------------------------------------------------------------------------

def _deflation_basis(spec: LinearSolveSpec, n: int):
    if spec.deflation is None:
        return None
    if isinstance(spec.deflation, str):
        if spec.deflation != "constants":
            raise GeometryViolation(f"unknown deflation space {spec.deflation!r}")
        z = np.ones((1, n)) / np.sqrt(n)
        return z
    Z = np.atleast_2d(np.asarray(spec.deflation, dtype=float))
    Q = []
    for row in Z:
        for q in Q:
            row = row - (q @ row) * q
        nrm = np.linalg.norm(row)
        if nrm > 1e-14:
            Q.append(row / nrm)
    return np.vstack(Q) if Q else None


def solve_spd(M: SparseMatrix, rhs: np.ndarray, spec: LinearSolveSpec | None = None,
              dirichlet=None):
    """Solve M x = rhs by Jacobi-preconditioned CG.

    `dirichlet` lists constrained entries (eliminated; homogeneous value 0).
    Deflation removes a known null space (constants on pure periodic
    systems), keeping CG on the orthogonal complement.  Returns
    (x, relative_residual, iterations).
    """
    spec = spec or LinearSolveSpec()
    n = M.shape[0]
    rhs = np.asarray(rhs, dtype=float).reshape(-1)
    if rhs.size != n:
        raise FieldKindMismatch("rhs length does not match matrix dimension")
    if dirichlet is not None and len(dirichlet) > 0:
        fixed = np.unique(np.asarray(dirichlet, dtype=np.int64))
        free = np.setdiff1d(np.arange(n, dtype=np.int64), fixed, assume_unique=True)
        sub = M.submatrix(free)
        x_free, res, iters = _pcg(sub.csr, rhs[free], spec)
        x = np.zeros(n)
        x[free] = x_free
        return x, res, iters
    x, res, iters = _pcg(M.csr, rhs, spec)
    return x, res, iters


def _pcg(A: sp.csr_matrix, b: np.ndarray, spec: LinearSolveSpec):
    n = A.shape[0]
    Z = _deflation_basis(spec, n)

    def project(v):
        if Z is not None:
            v = v - Z.T @ (Z @ v)
        return v

    b = project(b.copy())
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0.0, 0
    diag = A.diagonal().copy()
    diag[diag <= 0.0] = 1.0
    minv = 1.0 / diag

    x = np.zeros(n)
    r = b.copy()
    z = project(minv * r)
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    for it in range(1, spec.max_iterations + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        r = project(r)
        res = np.linalg.norm(r) / bnorm
        if res <= spec.tolerance:
            return project(x), res, it
        z = project(minv * r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise CGNoConvergence(
        f"CG did not reach tolerance {spec.tolerance:g} in {spec.max_iterations} "
        f"iterations (residual {res:.3e})", residual=res, iterations=spec.max_iterations)


# ---------------------------------------------------------------------------
# generalized eigenpairs: blocked inverse power iteration
# ---------------------------------------------------------------------------

def smallest_eigenpairs(S: SparseMatrix, M: SparseMatrix, k: int, dirichlet=None,
                        residual_tol: float = 1e-8, max_iterations: int = 500,
                        value_tol: float | None = None, shift: float = 0.0):
    """Smallest k eigenpairs of S x = lambda M x.

    Blocked inverse power iteration with modified Gram-Schmidt
    M-orthogonalization and a Rayleigh-Ritz projection each sweep; the inner
    applications of S^{-1} use a sparse LU factorization.  Convergence is
    declared when every kept pair satisfies ||S x - lambda M x|| / ||x||_M
    <= residual_tol (and, when value_tol is given, the eigenvalues also moved
    by less than value_tol relative between sweeps).  Returns (values,
    vectors) with vectors M-orthonormal and constrained entries equal to zero.

    When the target eigenvalues sit far from zero but close together (the
    whole group shifted by a large common offset), plain inverse iteration
    contracts at the ratio of consecutive eigenvalues and stagnates.  Passing
    a ``shift`` strictly below the smallest target eigenvalue factors
    S - shift * M instead, which restores a healthy contraction ratio; the
    Rayleigh-Ritz projection and the residual test still use the original
    pencil, so the returned values are unshifted.
    """
    n = S.shape[0]
    if dirichlet is not None and len(dirichlet) > 0:
        fixed = np.unique(np.asarray(dirichlet, dtype=np.int64))
        free = np.setdiff1d(np.arange(n, dtype=np.int64), fixed, assume_unique=True)
    else:
        free = np.arange(n, dtype=np.int64)
    Sf = S.submatrix(free).csr
    Mf = M.submatrix(free).csr
    nf = free.size
    if k < 1 or k > nf:
        raise EigenIterationDivergence(f"cannot compute {k} eigenpairs of a "
                                       f"{nf}-dimensional system")
    block = min(nf, k + 2)
    if shift != 0.0:
        lu = spla.splu((Sf - shift * Mf).tocsc())
    else:
        lu = spla.splu(Sf.tocsc())
    rng = np.random.Generator(np.random.PCG64(20240613))
    X = rng.standard_normal((nf, block))

    def m_orthonormalize(X):
        for c in range(X.shape[1]):
            v = X[:, c]
            for b in range(c):
                u = X[:, b]
                v = v - (u @ (Mf @ v)) * u
            nrm = np.sqrt(v @ (Mf @ v))
            if nrm < 1e-300:
                raise EigenIterationDivergence("eigen block collapsed")
            X[:, c] = v / nrm
        return X

    X = m_orthonormalize(X)
    lam_prev = None
    for _ in range(max_iterations):
        Y = lu.solve(Mf @ X)
        Y = m_orthonormalize(Y)
        Sb = Y.T @ (Sf @ Y)
        Mb = Y.T @ (Mf @ Y)
        lam_b, Q = scipy.linalg.eigh(Sb, Mb)
        X = Y @ Q
        lam = lam_b
        R = Sf @ X[:, :k] - Mf @ X[:, :k] * lam[:k]
        xm = np.sqrt(np.einsum("if,if->f", X[:, :k], Mf @ X[:, :k]))
        resid = np.linalg.norm(R, axis=0) / xm
        settled = True
        if value_tol is not None:
            settled = lam_prev is not None and np.all(
                np.abs(lam[:k] - lam_prev[:k]) <= value_tol * np.maximum(np.abs(lam[:k]), 1.0))
        lam_prev = lam
        if settled and np.all(resid <= residual_tol):
            vecs = np.zeros((n, k))
            vecs[free] = X[:, :k]
            return lam[:k].copy(), vecs
    raise EigenIterationDivergence(
        f"inverse power iteration did not converge in {max_iterations} sweeps "
        f"(worst residual {float(np.max(resid)):.3e})")


# ---------------------------------------------------------------------------
# weighted norms
# ---------------------------------------------------------------------------

def weighted_norm(mesh: Mesh, field_values: np.ndarray, w, p: float,
                  gradient: bool = False) -> float:
    """|| w g ||_{L^p} with g the nodal field or its per-element gradient.

    Element-midpoint (centroid) quadrature for finite p; for p = inf the max
    of |w g| over element centroids.
    """
    area, grads, _ = _geom(mesh)
    f = np.asarray(field_values, dtype=float).reshape(-1)
    if f.size != mesh.n_vertices:
        raise FieldKindMismatch("field length does not match the mesh")
    if w is None:
        wc = np.ones(mesh.n_triangles)
    else:
        w = np.asarray(w, dtype=float).reshape(-1)
        wc = w[mesh.triangles].mean(axis=1)
    if gradient:
        g = np.einsum("ti,tia->ta", f[mesh.triangles], grads)
        mag = np.hypot(g[:, 0], g[:, 1])
    else:
        mag = np.abs(f[mesh.triangles].mean(axis=1))
    vals = np.abs(wc) * mag
    if np.isinf(p):
        return float(np.max(vals)) if vals.size else 0.0
    if p <= 0:
        raise GeometryViolation(f"norm exponent must be positive, got {p}")
    return float(np.sum(area * vals ** p) ** (1.0 / p))
