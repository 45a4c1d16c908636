"""Mesh generation: counts, conformity, periodicity, tiling, location."""

import numpy as np
import pytest

from perfhom import geometry as geom
from perfhom import mesh as meshmod
from perfhom.errors import MeshGenerationFailure

import oracles


def benchmark_cell():
    return geom.build_cell_geometry([geom.HoleSpec.disk(0.0, 0.0, 0.25)], c0=0.2)


def edge_multiplicity(triangles):
    counts = {}
    for a, b, c in np.asarray(triangles):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (min(u, v), max(u, v))
            counts[key] = counts.get(key, 0) + 1
    return counts


def assert_conforming(mesh):
    counts = edge_multiplicity(mesh.triangles)
    assert set(counts.values()) <= {1, 2}
    boundary = {(min(a, b), max(a, b)) for a, b in mesh.boundary_edges}
    once = {e for e, c in counts.items() if c == 1}
    assert once == boundary


def test_empty_cell_counts_match_formula():
    cell = geom.build_cell_geometry([], c0=0.2)
    for n in (2, 4, 8):
        m = meshmod.triangulate_cell(cell, n)
        nv, nt, ncls = oracles.empty_cell_counts(n)
        assert m.n_vertices == nv
        assert m.n_triangles == nt
        assert m.torus_size == ncls


def test_empty_cell_conforming_with_unit_area():
    cell = geom.build_cell_geometry([], c0=0.2)
    m = meshmod.triangulate_cell(cell, 4)
    assert_conforming(m)
    areas = m.signed_areas()
    assert np.all(areas > 0.0)
    assert np.sum(areas) == pytest.approx(1.0, abs=1e-14)


def test_disk_cell_area_and_conformity():
    m = meshmod.triangulate_cell(benchmark_cell(), 16)
    assert_conforming(m)
    areas = m.signed_areas()
    assert np.all(areas > 0.0)
    exact = 1.0 - np.pi * 0.25 ** 2
    assert abs(np.sum(areas) - exact) / exact < 0.02


def test_hole_boundary_vertices_sit_on_circle():
    m = meshmod.triangulate_cell(benchmark_cell(), 16)
    ring = m.hole_boundary_vertices()
    assert ring.size > 0
    r = np.hypot(m.vertices[ring, 0], m.vertices[ring, 1])
    assert np.max(np.abs(r - 0.25)) < 1e-9


def test_periodic_pairs_identify_opposite_faces():
    m = meshmod.triangulate_cell(benchmark_cell(), 8)
    assert m.periodic_pairs_x and m.periodic_pairs_y
    for left, right in m.periodic_pairs_x.items():
        pl, pr = m.vertices[left], m.vertices[right]
        assert pl[0] == pytest.approx(-0.5, abs=1e-12)
        assert pr[0] == pytest.approx(0.5, abs=1e-12)
        assert pl[1] == pytest.approx(pr[1], abs=1e-12)
    for bot, top in m.periodic_pairs_y.items():
        pb, pt = m.vertices[bot], m.vertices[top]
        assert pb[1] == pytest.approx(-0.5, abs=1e-12)
        assert pt[1] == pytest.approx(0.5, abs=1e-12)
        assert pb[0] == pytest.approx(pt[0], abs=1e-12)


def test_torus_map_identifies_vertices_modulo_one():
    m = meshmod.triangulate_cell(benchmark_cell(), 8)
    tm = m.torus_map
    assert tm.shape == (m.n_vertices,)
    assert tm.max() + 1 == m.torus_size
    for cls in range(m.torus_size):
        members = np.nonzero(tm == cls)[0]
        base = m.vertices[members[0]]
        for v in members[1:]:
            diff = m.vertices[v] - base
            assert np.allclose(diff - np.round(diff), 0.0, atol=1e-9)


def test_cell_mesh_mirror_symmetry():
    # centered disk: the vertex set is invariant under x -> -x and y -> -y
    m = meshmod.triangulate_cell(benchmark_cell(), 8)
    canon = {(round(x, 9), round(y, 9)) for x, y in m.vertices}
    for flip in (np.array([-1.0, 1.0]), np.array([1.0, -1.0])):
        mirrored = {(round(x, 9), round(y, 9)) for x, y in m.vertices * flip}
        assert mirrored == canon


def test_locate_and_interpolate_on_cell():
    m = meshmod.triangulate_cell(benchmark_cell(), 16)
    lin = 2.0 + 3.0 * m.vertices[:, 0] - 1.5 * m.vertices[:, 1]
    rng = np.random.default_rng(7)
    pts = rng.uniform(-0.5, 0.5, size=(200, 2))
    outside = geom.distance_to_holes(pts, benchmark_cell(), periodic=False) > 0.05
    pts = pts[outside]
    vals = m.interpolate(lin, pts)
    assert np.allclose(vals, 2.0 + 3.0 * pts[:, 0] - 1.5 * pts[:, 1], atol=1e-12)
    # points deep inside the hole are reported as unlocated
    tri = m.locate(np.array([[0.0, 0.0], [0.1, 0.0]]))
    assert np.all(tri == -1)


def test_locate_on_solid_mesh():
    m = meshmod.triangulate_solid((2, 1), 4)
    lin = 1.0 + 0.5 * m.vertices[:, 0] + 2.0 * m.vertices[:, 1]
    rng = np.random.default_rng(3)
    pts = rng.uniform([0.0, 0.0], [2.0, 1.0], size=(100, 2))
    vals = m.interpolate(lin, pts)
    assert np.allclose(vals, 1.0 + 0.5 * pts[:, 0] + 2.0 * pts[:, 1], atol=1e-12)


def test_locate_unsupported_on_domain_mesh():
    cm = meshmod.triangulate_cell(benchmark_cell(), 8)
    spec = geom.build_perforated_domain(benchmark_cell(), (1, 1), 2)
    dm = meshmod.tile_domain_mesh(cm, spec)
    with pytest.raises(MeshGenerationFailure):
        dm.locate(np.array([[0.5, 0.5]]))


def test_solid_mesh_counts():
    m = meshmod.triangulate_solid((2, 1), 8)
    assert m.n_vertices == (2 * 8 + 1) * (8 + 1)
    assert m.n_triangles == 2 * 2 * 1 * 8 * 8
    assert np.sum(m.signed_areas()) == pytest.approx(2.0, abs=1e-12)
    assert_conforming(m)


def test_tiling_counts_and_scaling():
    cell = benchmark_cell()
    cm = meshmod.triangulate_cell(cell, 8)
    spec = geom.build_perforated_domain(cell, (2, 1), 2)
    dm = meshmod.tile_domain_mesh(cm, spec)
    # every epsilon-cell contributes an exact scaled copy of the cell mesh
    assert dm.n_triangles == spec.cells_x * spec.cells_y * cm.n_triangles
    assert dm.kind == "domain"
    assert dm.lineage is not None
    covered = 2.0 * 1.0 - spec.hole_count * np.pi * (0.25 / 2.0) ** 2
    assert abs(np.sum(dm.signed_areas()) - covered) / covered < 0.02
    assert_conforming(dm)


def test_domain_outer_dirichlet_on_boundary_only():
    cell = benchmark_cell()
    cm = meshmod.triangulate_cell(cell, 8)
    spec = geom.build_perforated_domain(cell, (1, 1), 2)
    dm = meshmod.tile_domain_mesh(cm, spec)
    fixed = dm.outer_dirichlet_vertices()
    p = dm.vertices[fixed]
    on_edge = (np.isclose(p[:, 0], 0.0) | np.isclose(p[:, 0], 1.0)
               | np.isclose(p[:, 1], 0.0) | np.isclose(p[:, 1], 1.0))
    assert np.all(on_edge)
    # hole rings are never Dirichlet
    holes = dm.hole_boundary_vertices()
    assert not np.intersect1d(fixed, holes).size


def test_fill_holes_restores_unit_area():
    cm = meshmod.triangulate_cell(benchmark_cell(), 16)
    full = meshmod.fill_holes(cm)
    assert full.kind == "cell_full"
    assert full.base_vertices == cm.n_vertices
    assert np.allclose(full.vertices[:cm.n_vertices], cm.vertices)
    assert np.array_equal(full.triangles[:cm.n_triangles], cm.triangles)
    assert np.sum(full.signed_areas()) == pytest.approx(1.0, abs=1e-10)
    assert_conforming(full)


def test_empty_cell_fill_holes_is_identity():
    cm = meshmod.triangulate_cell(geom.build_cell_geometry([], c0=0.2), 4)
    full = meshmod.fill_holes(cm)
    assert full.n_vertices == cm.n_vertices
    assert full.n_triangles == cm.n_triangles


def test_write_mesh_text(tmp_path):
    cm = meshmod.triangulate_cell(benchmark_cell(), 8)
    path = tmp_path / "cell.txt"
    meshmod.write_mesh_text(cm, path, fields={"one": np.ones(cm.n_vertices)})
    text = path.read_text()
    assert f"vertices {cm.n_vertices}" in text
    assert len(text.splitlines()) > cm.n_vertices