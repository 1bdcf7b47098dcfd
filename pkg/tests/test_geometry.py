import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from perfstrip.geometry import (CellSpec, GeometryError, HoleShape, StripSpec,
                                default_truncation, hausdorff_polylines, instantiate_cell,
                                is_simple_polygon, mirror_symmetry_defect, point_in_polygon,
                                polygon_area)

H = 0.4


def test_polygon_area_unit_square():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    assert polygon_area(sq) == 1.0
    assert polygon_area(sq[::-1]) == -1.0


def test_bowtie_is_not_simple():
    bow = np.array([[0, 0], [1, 1], [1, 0], [0, 1]], float)
    assert not is_simple_polygon(bow)


@pytest.mark.parametrize("hole", [
    HoleShape("disk", (0, 0.2), (0.08,)),
    HoleShape("ellipse", (0, 0.2), (0.1, 0.05, 0.5)),
    HoleShape("star", (0, 0.2), (0.08, 0.2, 5)),
])
def test_polygon_is_simple_ccw_and_close_to_exact_area(hole):
    poly = hole.polygon()
    assert is_simple_polygon(poly)
    a = polygon_area(poly)
    assert a > 0
    # chords cut inside a convex-ish curve by at most the sagitta along the perimeter
    perim = np.linalg.norm(np.diff(np.vstack([poly, poly[:1]]), axis=0), axis=1).sum()
    assert abs(a - hole.exact_area()) <= 2 * hole.tolerance * perim


@given(r=st.floats(0.01, 0.15), tol=st.floats(1e-5, 1e-3))
@settings(max_examples=30, deadline=None)
def test_disk_area_converges_with_tolerance(r, tol):
    hole = HoleShape("disk", (0, 0.2), (r,), boundary_tolerance=tol * r)
    a = hole.area()
    assert a <= math.pi * r * r
    assert math.pi * r * r - a <= 2 * math.pi * r * tol * r * 1.01


def test_invalid_holes_rejected():
    with pytest.raises(GeometryError):
        HoleShape("square", (0, 0), (1,))
    with pytest.raises(GeometryError):
        HoleShape("disk", (0, 0), (-1,))
    with pytest.raises(GeometryError):
        HoleShape("star", (0, 0), (0.1, 1.2, 3))


def test_hole_outside_strip_rejected():
    hole = HoleShape("disk", (0, 0.05), (0.08,))
    with pytest.raises(GeometryError):
        StripSpec(H, hole, 1.0).validate()


def test_mirror_symmetry_defect():
    assert mirror_symmetry_defect(HoleShape("disk", (0, 0.2), (0.08,)), H) < 1e-12
    off = HoleShape("disk", (0, 0.21), (0.08,))
    assert mirror_symmetry_defect(off, H) == pytest.approx(0.02, abs=1e-4)
    tilted = HoleShape("ellipse", (0, 0.2), (0.1, 0.05, 0.5))
    assert mirror_symmetry_defect(tilted, H) > 1e-2
    # the reflection of a hole reflects back to itself
    assert tilted.reflected(H).reflected(H) == tilted


def test_reflected_polygon_matches_mirror_image():
    tilted = HoleShape("ellipse", (0.01, 0.18), (0.1, 0.05, 0.5))
    p = tilted.polygon()
    mirrored = np.column_stack([p[:, 0], H - p[:, 1]])
    assert hausdorff_polylines(tilted.reflected(H).polygon(), mirrored) < 1e-4


def test_single_copy_is_the_hole_itself():
    hole = HoleShape("disk", (0, 0.2), (0.08,))
    polys = instantiate_cell(CellSpec(H, 1, hole))
    assert len(polys) == 1
    np.testing.assert_allclose(polys[0], hole.polygon())


def test_four_copies_positions_and_radii():
    hole = HoleShape("disk", (0, H / 2), (0.1 * H,))
    polys = instantiate_cell(CellSpec(H, 4, hole))
    for k, p in enumerate(polys):
        c = p.mean(axis=0)
        assert c[1] == pytest.approx((2 * k + 1) * H / 8, abs=1e-12)
        r = np.linalg.norm(p - c, axis=1)
        np.testing.assert_allclose(r, 0.025 * H, rtol=1e-12)


def test_overlapping_copies_name_k():
    hole = HoleShape("disk", (0, H / 2), (0.6 * H,))
    with pytest.raises(GeometryError, match="k=0"):
        instantiate_cell(CellSpec(H, 4, hole))


@pytest.mark.parametrize("N", [1, 2, 4, 8, 16])
def test_removed_area_scales_like_eps(N):
    hole = HoleShape("disk", (0, 0.2), (0.08,))
    polys = instantiate_cell(CellSpec(H, N, hole))
    total = sum(polygon_area(p) for p in polys)
    eps = 1 / N
    rel = abs(total - eps * hole.exact_area()) / (eps * hole.exact_area())
    assert rel <= 10 * hole.tolerance / hole.diameter


def test_point_in_polygon():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    inside = point_in_polygon(np.array([[0.5, 0.5], [1.5, 0.5]]), sq)
    assert inside.tolist() == [True, False]


def test_default_truncation_leaves_far_field_room():
    hole = HoleShape("disk", (0, 0.2), (0.08,))
    T = default_truncation(hole, H)
    StripSpec(H, hole, T).validate()
    assert math.exp(-2 * math.pi * T / H) < 1e-6
