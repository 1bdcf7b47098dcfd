import numpy as np
import pytest

from perfstrip.geometry import CellSpec, HoleShape, StripSpec, polygon_area
from perfstrip.meshgen import (MeshError, boundary_edges, mesh_cell, mesh_strip,
                               refine_uniform)

H = 0.4
DISK = HoleShape("disk", (0.0, 0.2), (0.08,))


def _edge_use_counts(tris):
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    _, counts = np.unique(np.sort(e, axis=1), axis=0, return_counts=True)
    return counts


def _assert_valid(mesh):
    assert np.all(mesh.triangle_areas() > 0)
    assert set(_edge_use_counts(mesh.triangles)) <= {1, 2}
    assert len(boundary_edges(mesh.triangles)) == len(mesh.edges)
    assert mesh.quality >= 20.0
    pairs = mesh.periodic_pairs
    # bijection between the two traces
    assert len(set(pairs[:, 0])) == len(set(pairs[:, 1])) == len(pairs)
    axis = 1 if mesh.kind == "cell" else 0
    V = mesh.vertices
    x0, x1, y0, y1 = mesh.bounds
    scale = max(x1 - x0, y1 - y0)
    assert np.abs(V[pairs[:, 0], axis] - V[pairs[:, 1], axis]).max() <= 1e-12 * scale


@pytest.fixture(scope="module")
def cell2():
    return mesh_cell(CellSpec(H, 2, DISK), 0.01, grading=1.3)


def test_unperforated_cell_structured():
    mesh = mesh_cell(CellSpec(H, 0), 0.1)
    _assert_valid(mesh)
    left = np.sort(mesh.vertices[mesh.periodic_pairs[:, 0], 1])
    right = np.sort(mesh.vertices[mesh.periodic_pairs[:, 1], 1])
    np.testing.assert_array_equal(left, right)
    assert mesh.h <= 0.1 + 1e-12
    assert mesh.area() == pytest.approx(H, rel=1e-12)


def test_perforated_cell_valid(cell2):
    _assert_valid(cell2)
    assert cell2.n_holes == 2


def test_hole_edges_lie_on_their_polygons(cell2):
    polys = cell2.meta["polygons"]
    idx = cell2.hole_edge_index()
    for k, poly in enumerate(polys):
        pts = cell2.vertices[cell2.edges[idx == k].ravel()]
        d = np.min(np.linalg.norm(pts[:, None] - poly[None], axis=2), axis=1)
        assert d.max() <= 1e-12


def test_cell_area_is_rectangle_minus_holes(cell2):
    holes = sum(polygon_area(p) for p in cell2.meta["polygons"])
    assert cell2.area() == pytest.approx(H - holes, rel=1e-10)


def test_halving_target_h_quadruples_vertices():
    spec = CellSpec(H, 2, DISK)
    n1 = mesh_cell(spec, 0.01).n_vertices
    n2 = mesh_cell(spec, 0.005).n_vertices
    assert 3 <= n2 / n1 <= 5


def test_meshing_is_deterministic():
    a = mesh_cell(CellSpec(H, 2, DISK), 0.01, grading=1.3)
    b = mesh_cell(CellSpec(H, 2, DISK), 0.01, grading=1.3)
    np.testing.assert_array_equal(a.vertices, b.vertices)
    np.testing.assert_array_equal(a.triangles, b.triangles)


def test_target_h_too_large():
    with pytest.raises(MeshError):
        mesh_cell(CellSpec(H, 8, DISK), 0.01)


def test_strip_without_hole():
    mesh = mesh_strip(StripSpec(H, None, 1.0), 0.05)
    _assert_valid(mesh)
    assert mesh.area() == pytest.approx(2 * H, rel=1e-12)
    bot = np.sort(mesh.vertices[mesh.periodic_pairs[:, 0], 0])
    top = np.sort(mesh.vertices[mesh.periodic_pairs[:, 1], 0])
    np.testing.assert_array_equal(bot, top)


def test_strip_uniform_grading_has_uniform_size():
    mesh = mesh_strip(StripSpec(H, DISK, 1.2), 0.02, grading=1.0)
    _assert_valid(mesh)
    # element size in the equilateral-side sense, which is what the area target controls
    side = np.sqrt(mesh.triangle_areas() / (np.sqrt(3) / 4))
    assert side.max() <= 0.02 * (1 + 1e-6)
    assert np.median(side) >= 0.5 * 0.02


def _strip_vertex_oracle(T, target_h, grading, h_max):
    # vertices ~ triangles / 2, with one equilateral triangle of side s(x) per 0.433 s^2
    x = np.linspace(-T, T, 2401)
    y = np.linspace(0.0, H, 401)
    X, Y = np.meshgrid(x, y)
    r = np.hypot(X, Y - 0.2)
    s = np.minimum(h_max, target_h + (grading - 1) * np.abs(r - 0.08))
    dens = np.where(r < 0.08, 0.0, 1.0 / (2 * np.sqrt(3) / 4 * s ** 2))
    return np.trapezoid(np.trapezoid(dens, x, axis=1), y)


def test_graded_strip_vertex_count_matches_sizing_oracle():
    mesh = mesh_strip(StripSpec(H, DISK, 1.2), 0.02, grading=1.2)
    _assert_valid(mesh)
    est = _strip_vertex_oracle(1.2, 0.02, 1.2, mesh.meta["h_max"])
    assert 0.5 <= mesh.n_vertices / est <= 2.0


def test_refine_uniform_nests_and_keeps_pairs(cell2):
    fine = refine_uniform(cell2)
    _assert_valid(fine)
    assert len(fine.triangles) == 4 * len(cell2.triangles)
    np.testing.assert_array_equal(fine.vertices[:cell2.n_vertices], cell2.vertices)
    assert fine.area() == pytest.approx(cell2.area(), rel=1e-12)
