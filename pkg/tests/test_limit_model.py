import math
import warnings

import pytest
from hypothesis import given, settings, strategies as st

from perfstrip.limit_model import (ExceptionalHWarning, branch_value, count_box_constants,
                                   find_node, find_nodes, is_exceptional_H, limit_eigenvalues)

PI = math.pi
heights = st.floats(0.1, 2.0).filter(lambda h: is_exceptional_H(h) is None)
etas = st.floats(-PI, PI)


def brute(H, eta, count):
    vals = sorted((eta + 2 * PI * j) ** 2 + (PI * k / H) ** 2
                  for j in range(-10, 11) for k in range(11))
    return vals[:count]


@given(H=st.floats(0.1, 3.0), eta=etas, count=st.integers(1, 20))
@settings(max_examples=200, deadline=None)
def test_matches_brute_force(H, eta, count):
    got = [e.value for e in limit_eigenvalues(H, eta, count)]
    assert got == pytest.approx(brute(H, eta, count), rel=1e-13)


@given(H=st.floats(0.1, 3.0), eta=etas, count=st.integers(1, 20))
@settings(max_examples=100, deadline=None)
def test_sorted_prefix_stable_and_even(H, eta, count):
    a = limit_eigenvalues(H, eta, count)
    b = limit_eigenvalues(H, eta, count + 1)
    vals = [e.value for e in a]
    assert vals == sorted(vals)
    assert vals == [e.value for e in b[:count]]
    mirror = [e.value for e in limit_eigenvalues(H, -eta, count)]
    assert mirror == pytest.approx(vals, rel=1e-13, abs=1e-13)


def test_values_at_zero():
    ev = limit_eigenvalues(0.4, 0.0, 5)
    assert [e.value for e in ev] == pytest.approx(
        [0, 4 * PI ** 2, 4 * PI ** 2, 6.25 * PI ** 2, 10.25 * PI ** 2])
    assert [(e.j, e.k) for e in ev[:4]] == [(0, 0), (-1, 0), (1, 0), (0, 1)]
    assert ev[4].k == 1 and abs(ev[4].j) == 1


def test_values_at_pi():
    ev = limit_eigenvalues(0.4, PI, 2)
    assert [e.value for e in ev] == pytest.approx([PI ** 2, PI ** 2])
    assert {(e.j, e.k) for e in ev} == {(0, 0), (-1, 0)}


@given(H=st.floats(0.1, 3.0), eta=etas)
def test_single_value_is_eta_squared(H, eta):
    ev = limit_eigenvalues(H, eta, 1)
    assert ev[0].value == eta * eta and (ev[0].j, ev[0].k) == (0, 0)


def test_reference_nodes_at_H_04():
    nodes = find_nodes(0.4, 5 * PI ** 2)
    sq, circ = find_node(nodes, "square"), find_node(nodes, "circ")
    assert sq.status == circ.status == "opens_gap"
    assert sq.proven and circ.proven
    assert sq.lambda_star == pytest.approx(PI ** 2)
    assert circ.lambda_star == pytest.approx(4 * PI ** 2)
    assert set(circ.branches) == {(1, 0), (-1, 0)}
    assert min(n.lambda_star for n in nodes) >= PI ** 2 * (1 - 1e-12)


def test_circ_node_shaded_above_half():
    circ = find_node(find_nodes(0.7, 5 * PI ** 2), "circ")
    assert circ.status == "shaded" and not circ.proven
    sq = find_node(find_nodes(0.7, 5 * PI ** 2), "square")
    assert sq.status == "opens_gap" and sq.proven


def test_square_node_unproven_above_one():
    sq = find_node(find_nodes(1.2, 2 * PI ** 2), "square")
    assert not sq.proven


@given(H=heights)
@settings(max_examples=60, deadline=None)
def test_node_values_and_classes(H):
    # high in the spectrum triple points occur at heights outside the listed set
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExceptionalHWarning)
        nodes = find_nodes(H, 12 * PI ** 2)
    for n in nodes:
        for j, k in n.branches:
            v = branch_value(H, j, k, n.eta_star)
            assert abs(v - n.lambda_star) <= 1e-12 * n.lambda_star
        (j1, k1), (j2, k2) = n.branches
        s = (n.eta_star + 2 * PI * j1) * (n.eta_star + 2 * PI * j2)
        if n.status == "exceptional_H":
            assert _third_branch_meets(H, n)
        elif s > 0:
            assert n.status == "same_slope_no_gap"
        elif k1 != k2:
            assert n.status == "symmetry_protected"
        else:
            assert n.status in ("opens_gap", "shaded")


def _third_branch_meets(H, n):
    lam = n.lambda_star
    for j in range(-5, 6):
        for k in range(8):
            if (j, k) in n.branches:
                continue
            for eta in (n.eta_star, -PI, 0.0, PI):
                if abs(branch_value(H, j, k, eta) - lam) <= 1e-9 * lam:
                    return True
    return False


def test_low_nodes_not_exceptional_off_the_listed_heights():
    with warnings.catch_warnings():
        warnings.simplefilter("error", ExceptionalHWarning)
        for H in (0.3, 0.4, 0.45, 0.7, 0.9, 1.2):
            find_nodes(H, 4.5 * PI ** 2)


def test_mixed_k_crossing_is_symmetry_protected():
    nodes = find_nodes(0.4, 10 * PI ** 2)
    mixed = [n for n in nodes if n.branches[0][1] != n.branches[1][1]]
    assert mixed
    assert all(n.status in ("symmetry_protected", "same_slope_no_gap") for n in mixed)


@pytest.mark.parametrize("H", [0.5, 1 / math.sqrt(3), 1.0])
def test_exceptional_heights_warn(H):
    with pytest.warns(ExceptionalHWarning):
        nodes = find_nodes(H, 10 * PI ** 2)
    assert any(n.status == "exceptional_H" for n in nodes)


def test_count_box_constants():
    K = count_box_constants(0.4, 0.5, 0.5)
    assert K["K1"] == pytest.approx(PI)
    assert K["K2"] == pytest.approx(2 * PI ** 2)
    assert K["K3"] == pytest.approx(2 * PI)
    assert K["K4"] == pytest.approx(min(4 * PI ** 2, PI ** 2 * 0.36 / 0.32))
    part = count_box_constants(0.7, 0.5, 0.5)
    assert part["K1"] is not None and part["K3"] is None
    assert "K3" in part["absent"]
    with pytest.raises(ValueError):
        count_box_constants(0.4, 4.0, 0.5)
