"""Unit-cell and perforated-domain geometry.

The reference cell is Y = (-1/2, 1/2)^2.  Holes are disks or simple polygons
whose closures stay strictly inside Y, pairwise separated (and separated from
the cell boundary) by at least c0.  A perforated domain is an axis-aligned
rectangle with integer side lengths tiled by epsilon-scaled copies of the
cell, so the separation assumption holds in the scaled form
dist(boundary, holes) >= c0 * epsilon by construction.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import shapely

from .errors import GeometryViolation, HoleOutsideCell, SeparationViolation

HALF = 0.5  # Y = (-HALF, HALF)^2


@dataclass(frozen=True)
class HoleSpec:
    """One hole of the unit cell: a disk (center, radius) or a simple polygon."""

    shape: str  # "disk" | "polygon"
    center: tuple[float, float] | None = None
    radius: float | None = None
    vertices: tuple[tuple[float, float], ...] | None = None
    label: int = 0

    @staticmethod
    def disk(cx: float, cy: float, radius: float, label: int = 0) -> "HoleSpec":
        return HoleSpec(shape="disk", center=(float(cx), float(cy)),
                        radius=float(radius), label=label)

    @staticmethod
    def polygon(vertices, label: int = 0) -> "HoleSpec":
        pts = tuple((float(x), float(y)) for x, y in vertices)
        return HoleSpec(shape="polygon", vertices=pts, label=label)

    def validate(self):
        if self.shape == "disk":
            if self.radius is None or self.center is None:
                raise GeometryViolation("disk hole needs center and radius")
            if not (self.radius > 0.0) or not all(math.isfinite(c) for c in self.center):
                raise GeometryViolation(f"degenerate disk hole (radius {self.radius})")
        elif self.shape == "polygon":
            if self.vertices is None or len(self.vertices) < 3:
                raise GeometryViolation("polygon hole needs at least 3 vertices")
            poly = shapely.Polygon(self.vertices)
            if not poly.is_valid or poly.area <= 0.0:
                raise GeometryViolation("polygon hole is not a simple positive-area polygon")
        else:
            raise GeometryViolation(f"unknown hole shape {self.shape!r}")

    # -- shape helpers -------------------------------------------------

    def shapely_geom(self) -> shapely.Geometry:
        """Exact geometry for polygons, the boundary circle's polygon is NOT
        used here: disks are handled analytically by the distance helpers."""
        if self.shape == "polygon":
            return shapely.Polygon(self.vertices)
        return shapely.Point(self.center)

    def distance_to_cell_boundary(self) -> float:
        """Signed distance from the hole to the four lines bounding Y
        (negative when the hole pokes outside)."""
        if self.shape == "disk":
            cx, cy = self.center
            return HALF - max(abs(cx), abs(cy)) - self.radius
        vs = np.asarray(self.vertices)
        return HALF - float(np.max(np.abs(vs)))

    def distance_to(self, other: "HoleSpec") -> float:
        if self.shape == "disk" and other.shape == "disk":
            d = math.dist(self.center, other.center)
            return d - self.radius - other.radius
        if self.shape == "disk":
            return other.shapely_geom().distance(shapely.Point(self.center)) - self.radius
        if other.shape == "disk":
            return self.shapely_geom().distance(shapely.Point(other.center)) - other.radius
        return self.shapely_geom().distance(other.shapely_geom())

    def grossly_outside(self) -> bool:
        """True when the hole's anchor is not even inside the closed cell."""
        if self.shape == "disk":
            cx, cy = self.center
            return max(abs(cx), abs(cy)) > HALF
        vs = np.asarray(self.vertices)
        return bool(np.all(np.max(np.abs(vs), axis=1) > HALF))

    def enlarged(self, margin: float) -> "HoleSpec":
        if self.shape != "disk":
            raise GeometryViolation(
                "enlarged holes are only constructed for disk holes")
        return HoleSpec.disk(self.center[0], self.center[1],
                             self.radius + margin, label=self.label)

    def boundary_polygon(self, n: int) -> np.ndarray:
        """Polygonal approximation of the hole boundary at mesh resolution n.

        Disks become inscribed regular polygons with >= 16 * ceil(n * radius)
        segments (first vertex at angle 0), so the same polygon is used by the
        mesher and by anything that needs the discrete hole boundary.  Polygon
        holes are returned as given, independent of n.
        """
        if self.shape == "polygon":
            return np.asarray(self.vertices, dtype=float)
        m = 16 * max(1, math.ceil(n * self.radius))
        ang = 2.0 * np.pi * np.arange(m) / m
        cx, cy = self.center
        return np.column_stack([cx + self.radius * np.cos(ang),
                                cy + self.radius * np.sin(ang)])


@dataclass(frozen=True)
class CellGeometry:
    """Validated unit-cell geometry: holes plus the separation constant c0."""

    holes: tuple[HoleSpec, ...]
    c0: float

    @property
    def empty(self) -> bool:
        return len(self.holes) == 0

    def boundary_clearance(self) -> float:
        if self.empty:
            return math.inf
        return min(h.distance_to_cell_boundary() for h in self.holes)

    def signature(self) -> str:
        """Deterministic fingerprint used for mesh lineage tokens."""
        parts = [f"c0={self.c0!r}"]
        for h in self.holes:
            if h.shape == "disk":
                parts.append(f"disk:{h.center!r}:{h.radius!r}")
            else:
                parts.append(f"poly:{h.vertices!r}")
        return hashlib.sha1("|".join(parts).encode()).hexdigest()[:16]

    def enlarged(self, margin: float | None = None) -> "CellGeometry":
        """Cell with every hole grown by `margin` (default c0/8), revalidated
        with the correspondingly reduced separation constant."""
        if margin is None:
            margin = self.c0 / 8.0
        grown = tuple(h.enlarged(margin) for h in self.holes)
        return build_cell_geometry(grown, self.c0 - 2.0 * margin)


def build_cell_geometry(holes, c0: float) -> CellGeometry:
    """Validate hole shapes and the c0 separation; raises on violations."""
    if not (c0 > 0.0) or not math.isfinite(c0):
        raise GeometryViolation(f"c0 must be positive and finite, got {c0}")
    holes = tuple(holes)
    for k, h in enumerate(holes):
        h.validate()
        if h.grossly_outside():
            raise HoleOutsideCell(f"hole {k} lies outside the unit cell")
        d = h.distance_to_cell_boundary()
        if d < c0:
            raise SeparationViolation(
                f"hole {k} is {d:.6g} from the cell boundary, needs >= c0 = {c0:.6g}")
    for i in range(len(holes)):
        for j in range(i + 1, len(holes)):
            d = holes[i].distance_to(holes[j])
            if d < c0:
                raise SeparationViolation(
                    f"holes {i} and {j} are {d:.6g} apart, needs >= c0 = {c0:.6g}")
    return CellGeometry(holes=holes, c0=c0)


@dataclass(frozen=True)
class PerforatedDomainSpec:
    """Rectangle Omega = (0,w) x (0,h) tiled by (N*w) x (N*h) epsilon-cells."""

    cell: CellGeometry
    omega: tuple[int, int]       # integer side lengths (unit scale)
    epsilon: Fraction            # always 1/N
    N: int

    @property
    def cells_x(self) -> int:
        return self.omega[0] * self.N

    @property
    def cells_y(self) -> int:
        return self.omega[1] * self.N

    @property
    def hole_count(self) -> int:
        return self.cells_x * self.cells_y * len(self.cell.holes)

    def boundary_clearance(self) -> float:
        """dist(boundary of Omega, scaled holes) = epsilon * dist(holes, cell boundary)."""
        return float(self.epsilon) * self.cell.boundary_clearance()

    def cell_origin(self, k: int, l: int) -> tuple[float, float]:
        """Center of cell (k, l) in domain coordinates."""
        eps = float(self.epsilon)
        return (eps * (k + 0.5), eps * (l + 0.5))


def build_perforated_domain(cell: CellGeometry, omega_cells, N: int) -> PerforatedDomainSpec:
    """Assemble the domain spec for Omega = (0,w) x (0,h) with epsilon = 1/N.

    The separation assumption is inherited in scaled form: every hole keeps
    distance >= c0 * epsilon from the boundary of Omega because it keeps
    distance >= c0 from the boundary of its own cell.
    """
    w, h = omega_cells
    if int(w) != w or int(h) != h or w < 1 or h < 1:
        raise GeometryViolation(f"omega must have integer side lengths >= 1, got {omega_cells}")
    if int(N) != N or N < 1:
        raise GeometryViolation(f"N must be a positive integer, got {N}")
    spec = PerforatedDomainSpec(cell=cell, omega=(int(w), int(h)),
                                epsilon=Fraction(1, int(N)), N=int(N))
    # Cannot fire for lattice-aligned rectangles; retained as a guard for
    # future domain shapes.
    if not cell.empty and spec.boundary_clearance() < cell.c0 * float(spec.epsilon) - 1e-15:
        raise GeometryViolation("holes come too close to the outer boundary")
    return spec


# ---------------------------------------------------------------------------
# distance / containment helpers shared by the mesher and the weight module
# ---------------------------------------------------------------------------

def hole_distance(points: np.ndarray, hole: HoleSpec) -> np.ndarray:
    """Euclidean distance from each point to the (true) hole; 0 inside."""
    pts = np.atleast_2d(points)
    if hole.shape == "disk":
        d = np.hypot(pts[:, 0] - hole.center[0], pts[:, 1] - hole.center[1]) - hole.radius
        return np.maximum(d, 0.0)
    geom = shapely.Polygon(hole.vertices)
    return shapely.distance(shapely.points(pts), geom)


def distance_to_holes(points: np.ndarray, cell: CellGeometry, periodic: bool = True) -> np.ndarray:
    """Distance to the union of holes, optionally over the periodic array.

    With `periodic` the nearest translate in {-1,0,1}^2 is taken, which is
    enough because holes keep distance c0 from the cell boundary.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if cell.empty:
        return np.full(pts.shape[0], np.inf)
    offsets = [(0.0, 0.0)]
    if periodic:
        offsets = [(ox, oy) for ox in (-1.0, 0.0, 1.0) for oy in (-1.0, 0.0, 1.0)]
    best = np.full(pts.shape[0], np.inf)
    for ox, oy in offsets:
        shifted = pts - np.array([ox, oy])
        for hole in cell.holes:
            np.minimum(best, hole_distance(shifted, hole), out=best)
    return best


def points_in_hole(points: np.ndarray, hole: HoleSpec, polygon: np.ndarray | None = None,
                   strict: bool = True) -> np.ndarray:
    """Membership test against the polygonal approximation of the hole.

    `polygon` is the ring from `boundary_polygon`; when omitted, disks are
    tested against the true circle.
    """
    pts = np.atleast_2d(points)
    if polygon is None and hole.shape == "disk":
        d = np.hypot(pts[:, 0] - hole.center[0], pts[:, 1] - hole.center[1])
        return d < hole.radius if strict else d <= hole.radius
    ring = polygon if polygon is not None else np.asarray(hole.vertices)
    geom = shapely.Polygon(ring)
    if strict:
        return shapely.contains_xy(geom, pts[:, 0], pts[:, 1])
    return shapely.intersects_xy(geom, pts[:, 0], pts[:, 1])


def polygon_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
