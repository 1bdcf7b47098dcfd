import json
import math

import numpy as np
import pytest

from perfstrip.band_sweep import (DispersionDataset, compare_asymptotics, count_box_check,
                                  eta_grid, extract_bands_gaps, lowest_pair_closeness,
                                  node_residuals, sweep, sweep_nodes)
from perfstrip.cell_constants import compute_cell_constants, reference_strip
from perfstrip.geometry import CellSpec, HoleShape
from perfstrip.limit_model import limit_eigenvalues

PI = math.pi
H = 0.4
DISK = HoleShape("disk", (0.0, 0.2), (0.08,))


@pytest.fixture(scope="module")
def plain():
    return sweep(CellSpec(H, 0), 17, 4, 0.02)


@pytest.fixture(scope="module")
def ds4():
    return sweep(CellSpec(H, 4, DISK), 17, 4, 0.005)


@pytest.fixture(scope="module")
def ds8():
    return sweep(CellSpec(H, 8, DISK), 17, 4, 0.0025)


@pytest.fixture(scope="module")
def cc():
    return compute_cell_constants(reference_strip(DISK, H), 0.005)


def test_grid_contains_endpoints_and_windows():
    grid, windows = eta_grid(H, 1 / 8, 17, 4)
    assert grid[0] == -PI and grid[-1] == PI
    assert np.all(np.diff(grid) > 0)
    stars = {round(w["lambda_star"], 9) for w in windows}
    assert {round(PI ** 2, 9), round(4 * PI ** 2, 9)} <= stars
    assert len(windows) == len(sweep_nodes(H, 4))
    np.testing.assert_allclose(grid, -grid[::-1], atol=1e-14)


def test_unperforated_matches_limit(plain):
    for e, row in zip(plain.eta_grid, plain.values):
        exact = [v.value for v in limit_eigenvalues(H, float(e), 4)]
        np.testing.assert_allclose(row, exact, rtol=3e-3, atol=1e-9)
    assert plain.windows == []


def test_unperforated_first_gap_closed(plain):
    _, gaps = extract_bands_gaps(plain, 3)
    assert not gaps[0].open
    assert abs(gaps[0].width) <= gaps[0].tolerance


def test_zero_survives_perforation(ds4):
    assert abs(ds4.value_at(0.0, 1)) < 1e-9


def test_columns_sorted_and_symmetric(ds4):
    assert np.all(np.diff(ds4.values, axis=1) >= -1e-9)
    assert ds4.symmetry_defect() <= 1e-9
    assert ds4.periodicity_defect() <= 1e-9


def test_gaps_open_when_perforated(ds8):
    bands, gaps = extract_bands_gaps(ds8, 3)
    assert gaps[0].open and gaps[1].open
    for b in bands:
        assert b.lo <= b.hi


def test_closeness_is_first_order(ds4, ds8):
    e = PI / 2
    d4 = abs(ds4.value_at(e, 1) - e * e)
    d8 = abs(ds8.value_at(e, 1) - e * e)
    assert 1.5 <= d4 / d8 <= 3
    assert 1.5 <= lowest_pair_closeness(ds4)["max"] / lowest_pair_closeness(ds8)["max"] <= 3


def test_extrema_come_in_mirror_pairs(ds4):
    for p in range(ds4.bands):
        col = ds4.values[:, p]
        for target in (col.min(), col.max()):
            at = ds4.eta_grid[np.abs(col - target) <= 1e-9 * max(1.0, abs(target))]
            np.testing.assert_allclose(np.sort(at), np.sort(-at), atol=1e-12)


def test_deterministic_with_threads():
    spec = CellSpec(H, 4, DISK)
    a = sweep(spec, 9, 3, 0.008, estimate_errors=False)
    b = sweep(spec, 9, 3, 0.008, workers=4, estimate_errors=False)
    np.testing.assert_array_equal(a.values, b.values)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)


def test_doubling_eta_samples_keeps_edges():
    spec = CellSpec(H, 4, DISK)
    a, _ = extract_bands_gaps(sweep(spec, 9, 3, 0.008, estimate_errors=False), 3)
    b, _ = extract_bands_gaps(sweep(spec, 17, 3, 0.008, estimate_errors=False), 3)
    for x, y in zip(a, b):
        assert abs(x.lo - y.lo) <= 1e-9 * max(1.0, abs(x.lo))
        assert abs(x.hi - y.hi) <= 1e-9 * abs(x.hi)


def test_csv_and_json_round_trip(ds4, tmp_path):
    ds4.to_csv(tmp_path / "d.csv")
    rows = np.loadtxt(tmp_path / "d.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(rows[:, 0], ds4.eta_grid)
    np.testing.assert_array_equal(rows[:, 1:], ds4.values)
    ds4.to_json(tmp_path / "d.json")
    back = DispersionDataset.from_dict(json.loads((tmp_path / "d.json").read_text()))
    np.testing.assert_array_equal(back.values, ds4.values)
    assert back.edge_errors == ds4.edge_errors


def test_value_at_requires_grid_point(ds4):
    with pytest.raises(KeyError):
        ds4.value_at(0.123456, 1)


def test_count_boxes(ds8):
    rep = count_box_check(ds8)
    assert set(rep["checks"]) == {"Lambda2>K1", "Lambda3>K2", "Lambda3>K3", "Lambda4>K4"}
    # the K3 box has a margin of only delta3^2 at eta = delta3, so it needs smaller eps
    for name in ("Lambda2>K1", "Lambda3>K2", "Lambda4>K4"):
        assert rep["checks"][name]["ok"]


def test_node_residuals_are_second_order(ds4, ds8, cc):
    for node in ("square", "circ"):
        c4 = node_residuals(ds4, cc, node)["fit_C"]
        c8 = node_residuals(ds8, cc, node)["fit_C"]
        assert math.isfinite(c4) and math.isfinite(c8)
        assert max(c4, c8) / min(c4, c8) < 3


def test_comparison_report(ds8, cc):
    rep = compare_asymptotics(ds8, cc)
    assert set(rep["nodes"]) == {"square", "circ"}
    assert [g["p"] for g in rep["gaps"]] == [1, 2]
    for g in rep["gaps"]:
        assert g["open"] and abs(g["relative_deviation"]) < 0.15
    assert rep["square_bracketing"]["ok"]
    assert rep["count_boxes"]["checks"]["Lambda2>K1"]["ok"]
    assert rep["simple_correction_example"]["lambda_prime"] <= 0
    json.dumps(rep)


def test_comparison_rejects_other_height(ds8, cc):
    other = DispersionDataset(ds8.eta_grid, ds8.values, 0.5, ds8.epsilon)
    with pytest.raises(ValueError):
        compare_asymptotics(other, cc)
