"""Unit-cell and perforated-domain geometry validation."""

from fractions import Fraction

import numpy as np
import pytest

from perfhom import geometry as geom
from perfhom.errors import GeometryViolation, HoleOutsideCell, SeparationViolation


def benchmark_cell():
    return geom.build_cell_geometry([geom.HoleSpec.disk(0.0, 0.0, 0.25)], c0=0.2)


def test_benchmark_cell_validates():
    cell = benchmark_cell()
    assert not cell.empty
    assert cell.boundary_clearance() == pytest.approx(0.25)
    assert cell.c0 == 0.2


def test_empty_cell():
    cell = geom.build_cell_geometry([], c0=0.2)
    assert cell.empty
    assert cell.boundary_clearance() == np.inf


def test_degenerate_disk_rejected():
    with pytest.raises(GeometryViolation):
        geom.build_cell_geometry([geom.HoleSpec.disk(0.0, 0.0, -0.1)], c0=0.2)
    with pytest.raises(GeometryViolation):
        geom.build_cell_geometry([geom.HoleSpec.disk(0.0, 0.0, 0.0)], c0=0.2)


def test_bad_c0_rejected():
    with pytest.raises(GeometryViolation):
        geom.build_cell_geometry([], c0=0.0)
    with pytest.raises(GeometryViolation):
        geom.build_cell_geometry([], c0=-1.0)


def test_hole_outside_cell_rejected():
    with pytest.raises(HoleOutsideCell):
        geom.build_cell_geometry([geom.HoleSpec.disk(2.0, 0.0, 0.1)], c0=0.01)


def test_hole_too_close_to_boundary_rejected():
    # radius 0.45 leaves only 0.05 < c0 = 0.2 to the cell boundary
    with pytest.raises(SeparationViolation):
        geom.build_cell_geometry([geom.HoleSpec.disk(0.0, 0.0, 0.45)], c0=0.2)


def test_holes_too_close_together_rejected():
    holes = [geom.HoleSpec.disk(-0.2, 0.0, 0.1), geom.HoleSpec.disk(0.2, 0.0, 0.1)]
    # gap between the disks is 0.4 - 0.2 = 0.2 >= c0 only for c0 <= 0.2
    geom.build_cell_geometry(holes, c0=0.15)
    with pytest.raises(SeparationViolation):
        geom.build_cell_geometry(holes, c0=0.25)


def test_polygon_hole_validates():
    tri = geom.HoleSpec.polygon([(-0.1, -0.1), (0.1, -0.1), (0.0, 0.1)])
    cell = geom.build_cell_geometry([tri], c0=0.2)
    assert cell.holes[0].shape == "polygon"
    with pytest.raises(GeometryViolation):
        geom.HoleSpec.polygon([(0.0, 0.0), (0.1, 0.1)]).validate()


def test_signature_is_stable_and_discriminating():
    a = benchmark_cell().signature()
    b = benchmark_cell().signature()
    c = geom.build_cell_geometry([geom.HoleSpec.disk(0.0, 0.0, 0.251)], c0=0.2).signature()
    assert a == b
    assert a != c


def test_enlarged_grows_radii_by_c0_over_8():
    cell = benchmark_cell()
    grown = cell.enlarged()
    assert grown.holes[0].radius == pytest.approx(0.25 + 0.2 / 8.0)
    assert grown.c0 == pytest.approx(0.2 - 2.0 * 0.2 / 8.0)


def test_perforated_domain_spec():
    cell = benchmark_cell()
    spec = geom.build_perforated_domain(cell, (2, 1), 4)
    assert spec.epsilon == Fraction(1, 4)
    assert spec.cells_x == 8 and spec.cells_y == 4
    assert spec.hole_count == 32
    assert spec.boundary_clearance() == pytest.approx(0.25 / 4.0)
    assert spec.cell_origin(0, 0) == pytest.approx((0.125, 0.125))


def test_perforated_domain_rejects_bad_omega_and_n():
    cell = benchmark_cell()
    with pytest.raises(GeometryViolation):
        geom.build_perforated_domain(cell, (0, 1), 4)
    with pytest.raises(GeometryViolation):
        geom.build_perforated_domain(cell, (1.5, 1), 4)
    with pytest.raises(GeometryViolation):
        geom.build_perforated_domain(cell, (1, 1), 0)


def test_hole_distance_disk():
    hole = geom.HoleSpec.disk(0.0, 0.0, 0.25)
    pts = np.array([[0.0, 0.0], [0.25, 0.0], [0.5, 0.0]])
    d = geom.hole_distance(pts, hole)
    assert d == pytest.approx([0.0, 0.0, 0.25])


def test_distance_to_holes_periodic_sees_neighbor_copies():
    # off-center hole: the nearest copy of the hole as seen from the far side
    # of the cell is the translate one period over, not the hole itself
    cell = geom.build_cell_geometry([geom.HoleSpec.disk(0.25, 0.0, 0.1)], c0=0.1)
    probe = np.array([[-0.45, 0.0]])
    d_per = geom.distance_to_holes(probe, cell, periodic=True)[0]
    d_raw = geom.distance_to_holes(probe, cell, periodic=False)[0]
    assert d_raw == pytest.approx(0.60)          # own-cell copy at x = 0.25
    assert d_per == pytest.approx(0.20)          # translate centered at x = -0.75
    # for the centered benchmark disk the own-cell copy is always nearest
    cell = benchmark_cell()
    probe = np.array([[0.45, 0.0]])
    assert geom.distance_to_holes(probe, cell, periodic=True)[0] == pytest.approx(0.20)


def test_distance_to_holes_empty_cell_is_infinite():
    cell = geom.build_cell_geometry([], c0=0.2)
    d = geom.distance_to_holes(np.array([[0.0, 0.0]]), cell)
    assert np.isinf(d).all()


def test_polygon_area_shoelace():
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    assert geom.polygon_area(square) == pytest.approx(1.0)
    assert geom.polygon_area(square[::-1]) == pytest.approx(-1.0)
