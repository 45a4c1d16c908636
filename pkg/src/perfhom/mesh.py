"""Triangular meshes for the punctured cell, the tiled domain, and solid rectangles.

The cell mesh starts from a structured n x n background grid on
Y = (-1/2, 1/2)^2.  Squares near a hole are removed and the annular gap
between the surviving "staircase" boundary and the polygonal hole boundary is
re-triangulated locally (Delaunay on the ring points only, then filtered).
Away from holes the mesh is exactly the structured grid, so opposite faces of
the cell carry mirror-identical vertex traces and the mesh tiles the domain
without floating-point seam matching: vertices are merged through exact
integer lattice keys.

Hole boundaries are tagged but carry no boundary condition in the degenerate
solvers; the tags exist so spectral problems and probes can constrain them.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import shapely
from scipy.spatial import Delaunay

from . import geometry as geom
from .errors import GeometryViolation, IoFailure, MeshGenerationFailure, TilingMismatch

# boundary tag codes
OUTER_DIRICHLET = 1
HOLE_BOUNDARY = 2
PERIODIC_LEFT = 3
PERIODIC_RIGHT = 4
PERIODIC_BOTTOM = 5
PERIODIC_TOP = 6

TAG_NAMES = {
    OUTER_DIRICHLET: "OuterDirichlet",
    HOLE_BOUNDARY: "HoleBoundary",
    PERIODIC_LEFT: "PeriodicFace(left)",
    PERIODIC_RIGHT: "PeriodicFace(right)",
    PERIODIC_BOTTOM: "PeriodicFace(bottom)",
    PERIODIC_TOP: "PeriodicFace(top)",
}

# vertex key kinds (exact lattice bookkeeping for tiling)
KEY_GRID = 0
KEY_HOLE = 1
KEY_FILL = 2

# background squares are dropped when their center is within
# (_CLEARANCE + diag/2) * h of a hole polygon; kept squares then keep
# distance >= _CLEARANCE * h, which is what makes the staircase and polygon
# edges appear in the local Delaunay triangulation.
_CLEARANCE = 0.6


@dataclass
class TileLineage:
    """How a domain mesh was produced from a cell mesh."""

    cell_token: str
    cell_mesh: "Mesh"
    spec: geom.PerforatedDomainSpec
    vertex_source: np.ndarray    # domain vertex -> cell vertex
    triangle_source: np.ndarray  # domain triangle -> cell triangle
    triangle_cell: np.ndarray    # domain triangle -> (k, l) cell indices


class Mesh:
    """Conforming P1 triangle mesh.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    boundary_edges : (ne, 2) int array
    boundary_tags : (ne,) int array of tag codes (see TAG_NAMES)
    h : float, target edge length
    kind : "cell" | "cell_full" | "domain" | "solid"
    periodic_pairs_x / periodic_pairs_y : dicts pairing left->right and
        bottom->top face vertices (cell meshes only)
    torus_map : vertex -> torus equivalence class index (cell meshes only)
    """

    def __init__(self, vertices, triangles, boundary_edges, boundary_tags, h, kind):
        self.vertices = np.asarray(vertices, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.boundary_edges = np.asarray(boundary_edges, dtype=np.int64).reshape(-1, 2)
        self.boundary_tags = np.asarray(boundary_tags, dtype=np.int64).reshape(-1)
        self.h = float(h)
        self.kind = kind
        self.token = ""
        # cell-mesh extras
        self.periodic_pairs_x: dict[int, int] | None = None
        self.periodic_pairs_y: dict[int, int] | None = None
        self.torus_map: np.ndarray | None = None
        self.torus_size: int = 0
        self.grid_n: int = 0
        self.cell: geom.CellGeometry | None = None
        self.key_kind: np.ndarray | None = None
        self.key_a: np.ndarray | None = None
        self.key_b: np.ndarray | None = None
        self.hole_rings: list[np.ndarray] = []
        self.kept_squares: np.ndarray | None = None
        self.square_tris: np.ndarray | None = None
        # full-cell extras
        self.base_vertices: int = 0
        self.base_triangles: int = 0
        # domain-mesh extras
        self.lineage: TileLineage | None = None
        # solid-mesh extras
        self.solid_shape: tuple[int, int, int] | None = None  # (w, h, n per unit)
        self._locator = None
        self._fem_cache = None

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def outer_dirichlet_vertices(self) -> np.ndarray:
        sel = self.boundary_tags == OUTER_DIRICHLET
        return np.unique(self.boundary_edges[sel])

    def hole_boundary_vertices(self) -> np.ndarray:
        sel = self.boundary_tags == HOLE_BOUNDARY
        return np.unique(self.boundary_edges[sel])

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    # -- point location ----------------------------------------------------

    def locate(self, points: np.ndarray):
        """Triangle index containing each point (-1 when in a hole).

        Supported for cell and solid meshes; used to sample nodal fields at
        quadrature points of another mesh.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "solid":
            return self._locate_solid(pts)
        if self.kind not in ("cell", "cell_full"):
            raise MeshGenerationFailure(f"point location not supported on {self.kind} mesh")
        return self._locate_cell(pts)

    def _locate_solid(self, pts):
        w, hgt, n = self.solid_shape
        nx, ny = w * n, hgt * n
        fi = np.clip(np.floor(pts[:, 0] * n).astype(np.int64), 0, nx - 1)
        fj = np.clip(np.floor(pts[:, 1] * n).astype(np.int64), 0, ny - 1)
        xi = pts[:, 0] * n - fi
        eta = pts[:, 1] * n - fj
        lower = eta <= xi
        # squares are enumerated i-major with two triangles each (lower first)
        return (fi * ny + fj) * 2 + np.where(lower, 0, 1)

    def _locate_cell(self, pts):
        n = self.grid_n
        if self._locator is None:
            self._locator = _build_cell_locator(self)
        sq_tri, annulus_by_square = self._locator
        fx = (pts[:, 0] + 0.5) * n
        fy = (pts[:, 1] + 0.5) * n
        fi = np.clip(np.floor(fx).astype(np.int64), 0, n - 1)
        fj = np.clip(np.floor(fy).astype(np.int64), 0, n - 1)
        out = np.full(pts.shape[0], -1, dtype=np.int64)
        # vectorized fast path: points in surviving structured squares
        t0 = sq_tri[fi, fj, 0]
        fast = t0 >= 0
        xi, eta = fx - fi, fy - fj
        first = np.where(_main_diagonal(fi, fj, n), eta <= xi, xi + eta <= 1.0)
        out[fast] = np.where(first[fast], t0[fast], sq_tri[fi, fj, 1][fast])
        tris = self.triangles
        verts = self.vertices
        for p in np.nonzero(~fast)[0]:
            for t in annulus_by_square.get((int(fi[p]), int(fj[p])), ()):
                a, b, c = tris[t]
                l1, l2, l3 = _barycentric(verts[a], verts[b], verts[c], pts[p])
                if l1 >= -1e-10 and l2 >= -1e-10 and l3 >= -1e-10:
                    out[p] = t
                    break
        return out

    def interpolate(self, nodal: np.ndarray, points: np.ndarray,
                    fill_value: float = 0.0) -> np.ndarray:
        """P1 interpolation of a nodal field at arbitrary points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tri = self.locate(pts)
        vals = np.full(pts.shape[0], fill_value, dtype=float)
        ok = tri >= 0
        if np.any(ok):
            t = self.triangles[tri[ok]]
            p0, p1, p2 = (self.vertices[t[:, k]] for k in range(3))
            l1, l2, l3 = _barycentric_vec(p0, p1, p2, pts[ok])
            vals[ok] = l1 * nodal[t[:, 0]] + l2 * nodal[t[:, 1]] + l3 * nodal[t[:, 2]]
        return vals


def _barycentric(p0, p1, p2, q):
    det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
    l2 = ((q[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (q[1] - p0[1])) / det
    l3 = ((p1[0] - p0[0]) * (q[1] - p0[1]) - (q[0] - p0[0]) * (p1[1] - p0[1])) / det
    return 1.0 - l2 - l3, l2, l3


def _barycentric_vec(p0, p1, p2, q):
    det = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) \
        - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    l2 = ((q[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
          - (p2[:, 0] - p0[:, 0]) * (q[:, 1] - p0[:, 1])) / det
    l3 = ((p1[:, 0] - p0[:, 0]) * (q[:, 1] - p0[:, 1])
          - (q[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])) / det
    return 1.0 - l2 - l3, l2, l3


def _build_cell_locator(mesh: Mesh):
    n = mesh.grid_n
    sq_tri = mesh.square_tris
    annulus = {}
    h = 1.0 / n
    for t in range(mesh.n_triangles):
        # structured triangles are already reachable through square_tris
        if mesh.square_tris is not None and t < _structured_count(mesh):
            continue
        p = mesh.vertices[mesh.triangles[t]]
        i0 = max(0, int(math.floor((p[:, 0].min() + 0.5) / h - 1e-12)))
        i1 = min(n - 1, int(math.floor((p[:, 0].max() + 0.5) / h + 1e-12)))
        j0 = max(0, int(math.floor((p[:, 1].min() + 0.5) / h - 1e-12)))
        j1 = min(n - 1, int(math.floor((p[:, 1].max() + 0.5) / h + 1e-12)))
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                annulus.setdefault((i, j), []).append(t)
    return sq_tri, annulus


def _structured_count(mesh: Mesh) -> int:
    return int(np.count_nonzero(mesh.square_tris[:, :, 0] >= 0)) * 2


def _main_diagonal(si, sj, n):
    """Split direction per grid square, alternating by quadrant.

    True selects the main diagonal (v00-v11), False the anti-diagonal
    (v10-v01).  The pattern (2i+1-n)(2j+1-n) >= 0 is invariant under the
    full symmetry group of the square, so centered-hole cells get meshes
    with exact discrete mirror symmetries (a fixed diagonal would break
    them and leak an O(h^2) off-diagonal into the homogenized tensor).
    """
    return (2 * np.asarray(si) + 1 - n) * (2 * np.asarray(sj) + 1 - n) >= 0


def _split_squares(si, sj, n, v00, v10, v01, v11):
    """Two CCW triangles per square, honoring the alternating diagonal."""
    main = _main_diagonal(si, sj, n)
    tri = np.empty((2 * len(si), 3), dtype=np.int64)
    tri[0::2] = np.where(main[:, None],
                         np.column_stack([v00, v10, v11]),
                         np.column_stack([v00, v10, v01]))
    tri[1::2] = np.where(main[:, None],
                         np.column_stack([v00, v11, v01]),
                         np.column_stack([v10, v11, v01]))
    return tri


# ---------------------------------------------------------------------------
# cell meshing
# ---------------------------------------------------------------------------

def triangulate_cell(cell: geom.CellGeometry, n: int) -> Mesh:
    """Mesh the punctured cell Y_* = Y \\ holes at grid resolution n.

    An empty cell yields exactly the structured mesh with (n+1)^2 vertices and
    2 n^2 triangles.  With holes, the polygon boundaries (inscribed regular
    polygons for disks) replace the removed grid squares and the gap is
    re-triangulated; the result is verified to be conforming, positively
    oriented, boundary-complete and area-exact before it is returned.
    """
    if cell.empty:
        if n < 1:
            raise GeometryViolation(f"grid resolution must be >= 1, got {n}")
    elif n < 4:
        raise GeometryViolation(f"grid resolution must be >= 4 with holes, got {n}")

    h = 1.0 / n
    xs = np.arange(n + 1) / float(n) - 0.5

    if cell.empty:
        mesh = _structured_cell(cell, n, xs)
        _finish_cell(mesh, cell, n)
        return mesh

    rings = [hole.boundary_polygon(n) for hole in cell.holes]
    polys = [shapely.Polygon(r) for r in rings]

    # squares whose center comes within (clearance + half-diagonal) of some
    # hole polygon are removed; every point of a kept square then keeps
    # distance >= clearance from every polygon
    centers_x, centers_y = np.meshgrid((xs[:-1] + xs[1:]) / 2.0,
                                       (xs[:-1] + xs[1:]) / 2.0, indexing="ij")
    centers = np.column_stack([centers_x.ravel(), centers_y.ravel()])
    cdist = np.full(centers.shape[0], np.inf)
    for poly in polys:
        np.minimum(cdist, shapely.distance(shapely.points(centers), poly), out=cdist)
    removed = (cdist < (_CLEARANCE + 0.5 * math.sqrt(2.0)) * h).reshape(n, n)
    if not np.any(~removed):
        raise MeshGenerationFailure("holes cover the whole background grid; increase n")

    # grid vertices survive when they belong to a kept square or lie on the
    # cell boundary (the boundary trace must stay complete for periodicity)
    kept_sq = ~removed
    vkeep = np.zeros((n + 1, n + 1), dtype=bool)
    vkeep[:-1, :-1] |= kept_sq
    vkeep[1:, :-1] |= kept_sq
    vkeep[:-1, 1:] |= kept_sq
    vkeep[1:, 1:] |= kept_sq
    vkeep[0, :] = vkeep[-1, :] = vkeep[:, 0] = vkeep[:, -1] = True

    # sanity: boundary vertices must keep clearance from the polygons, else
    # the resolution cannot separate the holes from the periodic faces
    bptsa = np.column_stack([np.full(n + 1, -0.5), xs])
    bpts = np.vstack([bptsa, np.column_stack([np.full(n + 1, 0.5), xs]),
                      np.column_stack([xs, np.full(n + 1, -0.5)]),
                      np.column_stack([xs, np.full(n + 1, 0.5)])])
    for poly in polys:
        if np.min(shapely.distance(shapely.points(bpts), poly)) < _CLEARANCE * h:
            raise MeshGenerationFailure(
                "hole too close to the cell boundary at this resolution; increase n")

    # vertex numbering: kept grid vertices in (i, j) lexicographic order,
    # then the polygon rings hole by hole
    gi, gj = np.nonzero(vkeep)
    grid_id = np.full((n + 1, n + 1), -1, dtype=np.int64)
    grid_id[gi, gj] = np.arange(gi.size)
    verts = [np.column_stack([xs[gi], xs[gj]])]
    key_kind = [np.full(gi.size, KEY_GRID, dtype=np.int64)]
    key_a = [gi.astype(np.int64)]
    key_b = [gj.astype(np.int64)]
    hole_rings = []
    base = gi.size
    for hid, ring in enumerate(rings):
        m = ring.shape[0]
        hole_rings.append(np.arange(base, base + m, dtype=np.int64))
        verts.append(ring)
        key_kind.append(np.full(m, KEY_HOLE, dtype=np.int64))
        key_a.append(np.full(m, hid, dtype=np.int64))
        key_b.append(np.arange(m, dtype=np.int64))
        base += m
    vertices = np.vstack(verts)
    key_kind = np.concatenate(key_kind)
    key_a = np.concatenate(key_a)
    key_b = np.concatenate(key_b)

    # structured triangles on kept squares (fixed diagonal, lower then upper)
    square_tris = np.full((n, n, 2), -1, dtype=np.int64)
    ks_i, ks_j = np.nonzero(kept_sq)
    v00 = grid_id[ks_i, ks_j]
    v10 = grid_id[ks_i + 1, ks_j]
    v01 = grid_id[ks_i, ks_j + 1]
    v11 = grid_id[ks_i + 1, ks_j + 1]
    if np.any(v00 < 0) or np.any(v10 < 0) or np.any(v01 < 0) or np.any(v11 < 0):
        raise MeshGenerationFailure("kept square lost a corner vertex")
    tri_struct = _split_squares(ks_i, ks_j, n, v00, v10, v01, v11)
    square_tris[ks_i, ks_j, 0] = 2 * np.arange(ks_i.size)
    square_tris[ks_i, ks_j, 1] = 2 * np.arange(ks_i.size) + 1

    # ring points for the local re-triangulation: kept grid vertices that
    # touch a removed square, plus all polygon vertices
    touch_removed = np.zeros((n + 1, n + 1), dtype=bool)
    touch_removed[:-1, :-1] |= removed
    touch_removed[1:, :-1] |= removed
    touch_removed[:-1, 1:] |= removed
    touch_removed[1:, 1:] |= removed
    ann_grid = vkeep & touch_removed
    ai, aj = np.nonzero(ann_grid)
    ann_ids = np.concatenate([grid_id[ai, aj]] + hole_rings)
    ann_pts = vertices[ann_ids]

    tri_ann = _triangulate_annulus(ann_pts, ann_ids, removed, polys, n)

    triangles = np.vstack([tri_struct, tri_ann]) if tri_ann.size else tri_struct
    mesh = Mesh(vertices, triangles, np.empty((0, 2)), np.empty(0), h, "cell")
    mesh.grid_n = n
    mesh.key_kind, mesh.key_a, mesh.key_b = key_kind, key_a, key_b
    mesh.hole_rings = hole_rings
    mesh.kept_squares = kept_sq
    mesh.square_tris = square_tris
    _orient_ccw(mesh)
    _classify_cell_boundary(mesh, rings)
    _verify_cell_mesh(mesh, cell, rings)
    _finish_cell(mesh, cell, n)
    return mesh


def _structured_cell(cell, n, xs):
    nv = (n + 1) * (n + 1)
    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    vertices = np.column_stack([xs[ii], xs[jj]])
    grid_id = np.arange(nv).reshape(n + 1, n + 1)
    si, sj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    si, sj = si.ravel(), sj.ravel()
    tri = _split_squares(si, sj, n, grid_id[si, sj], grid_id[si + 1, sj],
                         grid_id[si, sj + 1], grid_id[si + 1, sj + 1])
    mesh = Mesh(vertices, tri, np.empty((0, 2)), np.empty(0), 1.0 / n, "cell")
    mesh.grid_n = n
    mesh.key_kind = np.full(nv, KEY_GRID, dtype=np.int64)
    mesh.key_a = ii.astype(np.int64)
    mesh.key_b = jj.astype(np.int64)
    mesh.kept_squares = np.ones((n, n), dtype=bool)
    sq = np.full((n, n, 2), -1, dtype=np.int64)
    sq[si, sj, 0] = 2 * np.arange(si.size)
    sq[si, sj, 1] = 2 * np.arange(si.size) + 1
    mesh.square_tris = sq
    _classify_cell_boundary(mesh, [])
    return mesh


def _triangulate_annulus(ann_pts, ann_ids, removed, polys, n):
    """Delaunay on the ring points, filtered to the removed region minus holes."""
    if ann_pts.shape[0] < 3:
        return np.empty((0, 3), dtype=np.int64)
    dt = Delaunay(ann_pts)
    simp = dt.simplices
    p = ann_pts[simp]
    areas = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                   - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    keep = np.abs(areas) > 1e-14 / (n * n)
    simp, p = simp[keep], p[keep]
    cent = p.mean(axis=1)
    inside_hole = np.zeros(simp.shape[0], dtype=bool)
    for poly in polys:
        inside_hole |= shapely.contains_xy(poly, cent[:, 0], cent[:, 1])
    ci = np.clip(np.floor((cent[:, 0] + 0.5) * n).astype(np.int64), 0, n - 1)
    cj = np.clip(np.floor((cent[:, 1] + 0.5) * n).astype(np.int64), 0, n - 1)
    keep = ~inside_hole & removed[ci, cj]
    return ann_ids[simp[keep]]


def _orient_ccw(mesh: Mesh):
    areas = mesh.signed_areas()
    if np.any(np.abs(areas) < 1e-16):
        raise MeshGenerationFailure("triangulation produced a degenerate triangle")
    flip = areas < 0
    if np.any(flip):
        tri = mesh.triangles
        tri[flip, 1], tri[flip, 2] = tri[flip, 2].copy(), tri[flip, 1].copy()


def _edge_counts(triangles):
    e = np.vstack([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e = np.sort(e, axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq, counts


def _classify_cell_boundary(mesh: Mesh, rings):
    """Tag boundary edges as periodic faces or hole boundary, and build the
    periodic pairing; raises when an unexpected boundary edge shows up."""
    uniq, counts = _edge_counts(mesh.triangles)
    if np.any(counts > 2):
        raise MeshGenerationFailure("non-manifold edge (shared by > 2 triangles)")
    bnd = uniq[counts == 1]

    ring_edges = {}
    for hid, ring_ids in enumerate(mesh.hole_rings):
        m = len(ring_ids)
        for t in range(m):
            a, b = int(ring_ids[t]), int(ring_ids[(t + 1) % m])
            ring_edges[(min(a, b), max(a, b))] = hid

    v = mesh.vertices
    tags = np.empty(bnd.shape[0], dtype=np.int64)
    seen_ring = set()
    for r, (a, b) in enumerate(bnd):
        key = (int(min(a, b)), int(max(a, b)))
        if key in ring_edges:
            tags[r] = HOLE_BOUNDARY
            seen_ring.add(key)
            continue
        xa, ya = v[a]
        xb, yb = v[b]
        if xa == -0.5 and xb == -0.5:
            tags[r] = PERIODIC_LEFT
        elif xa == 0.5 and xb == 0.5:
            tags[r] = PERIODIC_RIGHT
        elif ya == -0.5 and yb == -0.5:
            tags[r] = PERIODIC_BOTTOM
        elif ya == 0.5 and yb == 0.5:
            tags[r] = PERIODIC_TOP
        else:
            raise MeshGenerationFailure(
                f"stray boundary edge between vertices {a} and {b}")
    if len(seen_ring) != len(ring_edges):
        raise MeshGenerationFailure("hole boundary is not fully covered by mesh edges")
    mesh.boundary_edges = bnd
    mesh.boundary_tags = tags


def _finish_cell(mesh: Mesh, cell: geom.CellGeometry, n: int):
    """Periodic pairing, torus identification, and the lineage token."""
    mesh.cell = cell
    kk, ka, kb = mesh.key_kind, mesh.key_a, mesh.key_b
    grid = kk == KEY_GRID
    ids = np.arange(mesh.n_vertices)

    def face_ids(axis_key, value):
        sel = grid & (axis_key == value)
        return ids[sel]

    lut = {}
    for vid in ids[grid]:
        lut[(int(ka[vid]), int(kb[vid]))] = int(vid)
    pairs_x = {}
    for vid in face_ids(ka, 0):
        pairs_x[int(vid)] = lut[(n, int(kb[vid]))]
    pairs_y = {}
    for vid in face_ids(kb, 0):
        pairs_y[int(vid)] = lut[(int(ka[vid]), n)]
    mesh.periodic_pairs_x = pairs_x
    mesh.periodic_pairs_y = pairs_y

    # torus classes: wrap grid keys modulo n; hole/fill vertices are their own class
    canon = {}
    torus = np.empty(mesh.n_vertices, dtype=np.int64)
    next_id = 0
    for vid in range(mesh.n_vertices):
        if kk[vid] == KEY_GRID:
            key = (KEY_GRID, int(ka[vid]) % n, int(kb[vid]) % n)
        else:
            key = (int(kk[vid]), int(ka[vid]), int(kb[vid]), vid)
        cid = canon.get(key)
        if cid is None:
            cid = next_id
            canon[key] = cid
            next_id += 1
        torus[vid] = cid
    mesh.torus_map = torus
    mesh.torus_size = next_id
    mesh.token = hashlib.sha1(
        f"{cell.signature()}:n={n}:{mesh.kind}".encode()).hexdigest()[:16]


def _verify_cell_mesh(mesh: Mesh, cell: geom.CellGeometry, rings):
    areas = mesh.signed_areas()
    if np.any(areas <= 0):
        raise MeshGenerationFailure("negative or zero triangle area after orientation")
    hole_area = sum(abs(geom.polygon_area(r)) for r in rings)
    total = float(np.sum(areas))
    if abs(total - (1.0 - hole_area)) > 1e-9:
        raise MeshGenerationFailure(
            f"mesh area {total!r} does not match cell area {1.0 - hole_area!r}")
    # no vertex strictly inside a hole
    for ring in rings:
        poly = shapely.Polygon(ring)
        inside = shapely.contains_xy(poly, mesh.vertices[:, 0], mesh.vertices[:, 1])
        shrink = shapely.distance(shapely.points(mesh.vertices[inside]),
                                  poly.exterior) if np.any(inside) else np.empty(0)
        if np.any(shrink > 1e-12):
            raise MeshGenerationFailure("mesh vertex strictly inside a hole")
    # connectivity of the punctured cell, checked on the triangle graph
    if not _connected(mesh.triangles, mesh.n_vertices):
        raise MeshGenerationFailure("punctured cell is not connected at this resolution")


def _connected(triangles, nv) -> bool:
    parent = np.arange(nv, dtype=np.int64)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for tri in triangles:
        ra = find(tri[0])
        for b in tri[1:]:
            rb = find(b)
            if ra != rb:
                parent[rb] = ra
    used = np.unique(triangles)
    roots = {int(find(u)) for u in used}
    return len(roots) == 1


# ---------------------------------------------------------------------------
# full-cell mesh (holes re-meshed) for flux potentials and extension probes
# ---------------------------------------------------------------------------

def fill_holes(mesh: Mesh) -> Mesh:
    """Extend a punctured cell mesh across its holes.

    The punctured mesh is kept verbatim (vertex and triangle ids are stable);
    each hole interior receives fresh vertices on the background grid plus a
    filtered Delaunay fill bounded by the existing polygon ring.  Nodal fields
    on the punctured mesh extend naturally: new vertices simply get new
    entries (the weight extends by zero).
    """
    if mesh.kind != "cell":
        raise MeshGenerationFailure("fill_holes expects a punctured cell mesh")
    cell, n = mesh.cell, mesh.grid_n
    if cell.empty:
        full = _clone_as(mesh, "cell_full")
        full.base_vertices = mesh.n_vertices
        full.base_triangles = mesh.n_triangles
        return full

    h = 1.0 / n
    xs = np.arange(n + 1) / float(n) - 0.5
    verts = [mesh.vertices]
    key_kind = [mesh.key_kind]
    key_a = [mesh.key_a]
    key_b = [mesh.key_b]
    new_tris = []
    base = mesh.n_vertices
    for hid, ring_ids in enumerate(mesh.hole_rings):
        ring = mesh.vertices[ring_ids]
        poly = shapely.Polygon(ring)
        ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        ii, jj = ii.ravel(), jj.ravel()
        gpts = np.column_stack([xs[ii], xs[jj]])
        inside = shapely.contains_xy(poly, gpts[:, 0], gpts[:, 1])
        far = shapely.distance(shapely.points(gpts), poly.exterior) >= _CLEARANCE * h
        sel = inside & far
        fill_pts = gpts[sel]
        fill_ids = np.arange(base, base + fill_pts.shape[0], dtype=np.int64)
        pts = np.vstack([ring, fill_pts])
        pids = np.concatenate([ring_ids, fill_ids])
        dt = Delaunay(pts)
        simp = dt.simplices
        cent = pts[simp].mean(axis=1)
        keep = shapely.contains_xy(poly, cent[:, 0], cent[:, 1])
        tri = pids[simp[keep]]
        new_tris.append(tri)
        verts.append(fill_pts)
        key_kind.append(np.full(fill_pts.shape[0], KEY_FILL, dtype=np.int64))
        key_a.append(np.full(fill_pts.shape[0], hid, dtype=np.int64))
        key_b.append(np.arange(fill_pts.shape[0], dtype=np.int64))
        base += fill_pts.shape[0]

    vertices = np.vstack(verts)
    triangles = np.vstack([mesh.triangles] + new_tris)
    full = Mesh(vertices, triangles, np.empty((0, 2)), np.empty(0), mesh.h, "cell_full")
    full.grid_n = n
    full.key_kind = np.concatenate(key_kind)
    full.key_a = np.concatenate(key_a)
    full.key_b = np.concatenate(key_b)
    full.hole_rings = mesh.hole_rings
    full.kept_squares = mesh.kept_squares
    full.square_tris = mesh.square_tris
    full.base_vertices = mesh.n_vertices
    full.base_triangles = mesh.n_triangles
    _orient_ccw(full)

    # verification: conforming, closed area, boundary = periodic faces only
    uniq, counts = _edge_counts(full.triangles)
    if np.any(counts > 2):
        raise MeshGenerationFailure("non-manifold edge in the filled cell mesh")
    bnd = uniq[counts == 1]
    v = full.vertices
    on_face = ((v[bnd[:, 0], 0] == v[bnd[:, 1], 0]) & (np.abs(v[bnd[:, 0], 0]) == 0.5)) | \
              ((v[bnd[:, 0], 1] == v[bnd[:, 1], 1]) & (np.abs(v[bnd[:, 0], 1]) == 0.5))
    if not np.all(on_face):
        raise MeshGenerationFailure("hole fill left an internal gap")
    if abs(float(np.sum(full.signed_areas())) - 1.0) > 1e-9:
        raise MeshGenerationFailure("filled cell mesh does not cover the unit cell")
    full.boundary_edges = bnd
    tags = np.empty(bnd.shape[0], dtype=np.int64)
    for r, (a, b) in enumerate(bnd):
        xa, ya = v[a]
        xb, _ = v[b]
        if xa == -0.5 and xb == -0.5:
            tags[r] = PERIODIC_LEFT
        elif xa == 0.5 and xb == 0.5:
            tags[r] = PERIODIC_RIGHT
        elif ya == -0.5:
            tags[r] = PERIODIC_BOTTOM
        else:
            tags[r] = PERIODIC_TOP
    full.boundary_tags = tags
    _finish_cell(full, cell, n)
    return full


def _clone_as(mesh: Mesh, kind: str) -> Mesh:
    out = Mesh(mesh.vertices.copy(), mesh.triangles.copy(),
               mesh.boundary_edges.copy(), mesh.boundary_tags.copy(), mesh.h, kind)
    out.grid_n = mesh.grid_n
    out.key_kind = mesh.key_kind.copy()
    out.key_a = mesh.key_a.copy()
    out.key_b = mesh.key_b.copy()
    out.hole_rings = list(mesh.hole_rings)
    out.kept_squares = mesh.kept_squares
    out.square_tris = mesh.square_tris
    _finish_cell(out, mesh.cell, mesh.grid_n)
    return out


# ---------------------------------------------------------------------------
# domain tiling
# ---------------------------------------------------------------------------

def tile_domain_mesh(cell_mesh: Mesh, spec: geom.PerforatedDomainSpec) -> Mesh:
    """Tile Omega with epsilon-scaled copies of the cell mesh.

    Vertices on shared cell faces are merged through exact integer lattice
    keys (global grid index = cell index * n + local index), so merging never
    relies on floating-point coordinate comparisons.
    """
    if cell_mesh.kind != "cell":
        raise TilingMismatch("tiling requires a punctured cell mesh")
    if cell_mesh.cell.signature() != spec.cell.signature():
        raise TilingMismatch("cell mesh geometry does not match the domain spec")
    _check_periodic_traces(cell_mesh)

    n = cell_mesh.grid_n
    W, H = spec.cells_x, spec.cells_y
    eps = float(spec.epsilon)
    Gx, Gy = W * n + 1, H * n + 1

    kk = cell_mesh.key_kind
    grid_sel = kk == KEY_GRID
    gi = cell_mesh.key_a[grid_sel]
    gj = cell_mesh.key_b[grid_sel]
    grid_vids = np.nonzero(grid_sel)[0]
    hole_vids = np.nonzero(~grid_sel)[0]
    nh = hole_vids.size

    used = np.zeros((Gx, Gy), dtype=bool)
    for k in range(W):
        for l in range(H):
            used[gi + k * n, gj + l * n] = True
    grid_id = np.full((Gx, Gy), -1, dtype=np.int64)
    ui, uj = np.nonzero(used)
    n_grid = ui.size
    grid_id[ui, uj] = np.arange(n_grid)

    scale = eps / n
    vx = np.empty(n_grid + W * H * nh)
    vy = np.empty_like(vx)
    vx[:n_grid] = ui * scale
    vy[:n_grid] = uj * scale
    vertex_source = np.full(n_grid + W * H * nh, -1, dtype=np.int64)

    nt_c = cell_mesh.n_triangles
    triangles = np.empty((W * H * nt_c, 3), dtype=np.int64)
    tri_source = np.tile(np.arange(nt_c, dtype=np.int64), W * H)
    tri_cell = np.empty((W * H * nt_c, 2), dtype=np.int64)

    hole_local = cell_mesh.vertices[hole_vids]
    lut = np.empty(cell_mesh.n_vertices, dtype=np.int64)
    bnd_edges = []
    bnd_tags = []
    cell_bt = cell_mesh.boundary_tags
    cell_be = cell_mesh.boundary_edges
    hole_edge_sel = cell_bt == HOLE_BOUNDARY
    side_sel = {PERIODIC_LEFT: cell_bt == PERIODIC_LEFT,
                PERIODIC_RIGHT: cell_bt == PERIODIC_RIGHT,
                PERIODIC_BOTTOM: cell_bt == PERIODIC_BOTTOM,
                PERIODIC_TOP: cell_bt == PERIODIC_TOP}

    c = 0
    for k in range(W):
        for l in range(H):
            lut[grid_vids] = grid_id[gi + k * n, gj + l * n]
            hbase = n_grid + c * nh
            lut[hole_vids] = hbase + np.arange(nh)
            vx[hbase:hbase + nh] = eps * (k + 0.5 + hole_local[:, 0])
            vy[hbase:hbase + nh] = eps * (l + 0.5 + hole_local[:, 1])
            vertex_source[hbase:hbase + nh] = hole_vids
            first = vertex_source[lut[grid_vids]] < 0
            vertex_source[lut[grid_vids[first]]] = grid_vids[first]
            triangles[c * nt_c:(c + 1) * nt_c] = lut[cell_mesh.triangles]
            tri_cell[c * nt_c:(c + 1) * nt_c] = (k, l)
            if nh:
                mapped = lut[cell_be[hole_edge_sel]]
                bnd_edges.append(mapped)
                bnd_tags.append(np.full(mapped.shape[0], HOLE_BOUNDARY, dtype=np.int64))
            for side, at_edge in ((PERIODIC_LEFT, k == 0), (PERIODIC_RIGHT, k == W - 1),
                                  (PERIODIC_BOTTOM, l == 0), (PERIODIC_TOP, l == H - 1)):
                if at_edge:
                    mapped = lut[cell_be[side_sel[side]]]
                    bnd_edges.append(mapped)
                    bnd_tags.append(np.full(mapped.shape[0], OUTER_DIRICHLET, dtype=np.int64))
            c += 1

    vertices = np.column_stack([vx, vy])
    bnd_edges = np.vstack(bnd_edges) if bnd_edges else np.empty((0, 2), dtype=np.int64)
    bnd_tags = np.concatenate(bnd_tags) if bnd_tags else np.empty(0, dtype=np.int64)

    mesh = Mesh(vertices, triangles, bnd_edges, bnd_tags, eps / n, "domain")
    mesh.lineage = TileLineage(cell_token=cell_mesh.token, cell_mesh=cell_mesh,
                               spec=spec, vertex_source=vertex_source,
                               triangle_source=tri_source, triangle_cell=tri_cell)
    mesh.token = hashlib.sha1(
        f"{cell_mesh.token}:tile:{spec.omega}:{spec.N}".encode()).hexdigest()[:16]
    _verify_tiling(mesh)
    return mesh


def _check_periodic_traces(cell_mesh: Mesh):
    v = cell_mesh.vertices
    for pairs, axis in ((cell_mesh.periodic_pairs_x, 1), (cell_mesh.periodic_pairs_y, 0)):
        if not pairs:
            raise TilingMismatch("cell mesh has no periodic pairing")
        for a, b in pairs.items():
            if v[a, axis] != v[b, axis]:
                raise TilingMismatch("periodic traces are not mirror-identical")


def _verify_tiling(mesh: Mesh):
    areas = mesh.signed_areas()
    if np.any(areas <= 0):
        raise TilingMismatch("tiling produced a non-positive triangle")
    uniq, counts = _edge_counts(mesh.triangles)
    if np.any(counts > 2):
        raise TilingMismatch("tiling produced a non-manifold edge")
    bnd = uniq[counts == 1]
    tagged = {(int(min(a, b)), int(max(a, b))) for a, b in mesh.boundary_edges}
    actual = {(int(min(a, b)), int(max(a, b))) for a, b in bnd}
    if tagged != actual:
        raise TilingMismatch("tiled mesh boundary does not match the tagged edges")
    spec = mesh.lineage.spec
    w, hgt = spec.omega
    hole_area = 0.0
    if not spec.cell.empty:
        cellm = mesh.lineage.cell_mesh
        hole_area = (1.0 - float(np.sum(cellm.signed_areas()))) * spec.cells_x * spec.cells_y \
            * float(spec.epsilon) ** 2
    if abs(float(np.sum(areas)) - (w * hgt - hole_area)) > 1e-7 * w * hgt:
        raise TilingMismatch("tiled mesh area does not match the perforated domain")


# ---------------------------------------------------------------------------
# solid rectangle
# ---------------------------------------------------------------------------

def triangulate_solid(omega, n_per_unit: int) -> Mesh:
    """Structured mesh of the solid rectangle (0,w) x (0,h), n squares per unit."""
    w, hgt = int(omega[0]), int(omega[1])
    if w < 1 or hgt < 1 or n_per_unit < 1:
        raise GeometryViolation("solid mesh needs positive integer sides and resolution")
    nx, ny = w * n_per_unit, hgt * n_per_unit
    xs = np.arange(nx + 1) / float(n_per_unit)
    ys = np.arange(ny + 1) / float(n_per_unit)
    ii, jj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="ij")
    vertices = np.column_stack([xs[ii.ravel()], ys[jj.ravel()]])
    grid_id = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    si, sj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    si, sj = si.ravel(), sj.ravel()
    tri = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tri[0::2] = np.column_stack([grid_id[si, sj], grid_id[si + 1, sj], grid_id[si + 1, sj + 1]])
    tri[1::2] = np.column_stack([grid_id[si, sj], grid_id[si + 1, sj + 1], grid_id[si, sj + 1]])

    edges = []
    tags = []
    for j in range(ny):
        edges.append((grid_id[0, j], grid_id[0, j + 1]))
        edges.append((grid_id[nx, j], grid_id[nx, j + 1]))
    for i in range(nx):
        edges.append((grid_id[i, 0], grid_id[i + 1, 0]))
        edges.append((grid_id[i, ny], grid_id[i + 1, ny]))
    tags = np.full(len(edges), OUTER_DIRICHLET, dtype=np.int64)

    mesh = Mesh(vertices, tri, np.asarray(edges), tags, 1.0 / n_per_unit, "solid")
    mesh.solid_shape = (w, hgt, n_per_unit)
    mesh.token = hashlib.sha1(f"solid:{w}x{hgt}:n={n_per_unit}".encode()).hexdigest()[:16]
    return mesh


# ---------------------------------------------------------------------------
# text dump
# ---------------------------------------------------------------------------

def write_mesh_text(mesh: Mesh, path, fields: dict | None = None):
    """Dump a mesh (and optional nodal fields) in a line-oriented text format.

    Layout: a header line `perfhom-mesh 1`, then `vertices <nv>` followed by
    one `x y` pair per line, `triangles <nt>` with vertex triples,
    `boundary_edges <ne>` with `a b tag-name`, and one `field <name> <nv>`
    block per nodal field.  All floats use repr-exact %.17g formatting.
    """
    lines = [f"perfhom-mesh 1", f"kind {mesh.kind}", f"h {mesh.h:.17g}"]
    lines.append(f"vertices {mesh.n_vertices}")
    lines.extend(f"{x:.17g} {y:.17g}" for x, y in mesh.vertices)
    lines.append(f"triangles {mesh.n_triangles}")
    lines.extend(f"{a} {b} {c}" for a, b, c in mesh.triangles)
    lines.append(f"boundary_edges {mesh.boundary_edges.shape[0]}")
    lines.extend(f"{a} {b} {TAG_NAMES[int(t)]}"
                 for (a, b), t in zip(mesh.boundary_edges, mesh.boundary_tags))
    for name, values in (fields or {}).items():
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size != mesh.n_vertices:
            raise IoFailure(f"field {name!r} has {values.size} values for "
                            f"{mesh.n_vertices} vertices")
        lines.append(f"field {name} {values.size}")
        lines.extend(f"{v:.17g}" for v in values)
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write mesh dump {path}: {exc}") from exc
