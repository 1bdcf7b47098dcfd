"""Dispersion sweeps of the perforated cell, bands and gaps, and the comparison
with the first-order asymptotics.

The eta grid is a uniform grid on ``[-pi, pi]`` plus, for every crossing of
the limit curves among the requested bands, a window
``eta_star + eps * psi`` with ``|psi| <= psi_max``.  All points share one mesh
and one cached assembler; per-eta solves run in a bounded thread pool and are
collected in grid order, so results do not depend on scheduling.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .asymptotics import (correction_node, correction_simple, node_branch_indices,
                          predicted_gaps, NODES, ValidityRangeWarning)
from .cell_constants import CellConstants
from .fem import BlochAssembler, solve_lowest, SOLVER_TOL
from .geometry import CellSpec
from .limit_model import find_nodes, limit_eigenvalues, count_box_constants
from .meshgen import PeriodicMesh, mesh_cell, refine_uniform

_PI = math.pi
SWEEP_DENSE_CEILING = 1000
PSI_MAX = 8.0
WINDOW_SAMPLES = 17
GAP_TOL_FACTOR = 3.0


class SweepError(RuntimeError):
    """A per-eta solve failed; the message names the eta."""

    def __init__(self, eta, cause):
        super().__init__(f"eta={eta:.17g}: {cause}")
        self.eta = eta
        self.cause = cause


@dataclass
class DispersionDataset:
    eta_grid: np.ndarray
    values: np.ndarray
    H: float
    epsilon: float
    mesh_meta: dict = field(default_factory=dict)
    windows: list = field(default_factory=list)
    residuals: Optional[np.ndarray] = None
    edge_errors: dict = field(default_factory=dict)

    @property
    def bands(self) -> int:
        return self.values.shape[1]

    def value_at(self, eta: float, p: int) -> float:
        """Eigenvalue ``p`` (1-based) at a grid point ``eta``."""
        i = int(np.argmin(np.abs(self.eta_grid - eta)))
        if abs(self.eta_grid[i] - eta) > 1e-12 * max(1.0, abs(eta)):
            raise KeyError(f"eta={eta} is not a grid point")
        return float(self.values[i, p - 1])

    def symmetry_defect(self) -> float:
        """Max relative mismatch between ``eta`` and ``-eta`` columns."""
        worst = 0.0
        for i, e in enumerate(self.eta_grid):
            j = int(np.argmin(np.abs(self.eta_grid + e)))
            if abs(self.eta_grid[j] + e) > 1e-12:
                continue
            d = np.abs(self.values[i] - self.values[j]) / np.maximum(np.abs(self.values[i]), 1.0)
            worst = max(worst, float(d.max()))
        return worst

    def periodicity_defect(self) -> float:
        a, b = self.values[0], self.values[-1]
        return float((np.abs(a - b) / np.maximum(np.abs(a), 1.0)).max())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eta"] + [f"lambda{p + 1}" for p in range(self.bands)])
            for e, row in zip(self.eta_grid, self.values):
                w.writerow([repr(float(e))] + [repr(float(v)) for v in row])

    def to_dict(self) -> dict:
        return {
            "H": self.H,
            "epsilon": self.epsilon,
            "bands": self.bands,
            "mesh": self.mesh_meta,
            "eta": [float(e) for e in self.eta_grid],
            "values": [[float(v) for v in row] for row in self.values],
            "residual_max": None if self.residuals is None else float(np.max(self.residuals)),
            "windows": self.windows,
            "edge_errors": {str(k): v for k, v in self.edge_errors.items()},
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "DispersionDataset":
        return cls(np.array(d["eta"]), np.array(d["values"]), d["H"], d["epsilon"],
                   d.get("mesh", {}), d.get("windows", []), None,
                   {int(k): v for k, v in d.get("edge_errors", {}).items()})


def _wrap(eta: float) -> float:
    if eta > _PI:
        eta -= 2 * _PI
    elif eta < -_PI:
        eta += 2 * _PI
    return eta


def sweep_nodes(H: float, bands: int) -> list:
    """Limit crossings whose two curves are among the lowest ``bands`` there."""
    top = max(limit_eigenvalues(H, e, bands)[-1].value for e in np.linspace(-_PI, _PI, 65))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        nodes = find_nodes(H, top)
    out = []
    for n in nodes:
        below = sum(1 for v in limit_eigenvalues(H, n.eta_star, bands + 2)
                    if v.value < n.lambda_star * (1 - 1e-12))
        if below + 2 <= bands:
            out.append(n)
    return out


def eta_grid(H: float, epsilon: float, eta_samples: int, bands: int,
             psi_max: float = PSI_MAX, window_samples: int = WINDOW_SAMPLES) -> tuple:
    """Sorted unique grid and the window descriptions."""
    if eta_samples < 9:
        raise ValueError("eta_samples must be at least 9")
    pts = list(np.linspace(-_PI, _PI, eta_samples))
    windows = []
    if epsilon > 0:
        psis = np.linspace(-psi_max, psi_max, window_samples)
        for n in sweep_nodes(H, bands):
            etas = [_wrap(n.eta_star + epsilon * p) for p in psis]
            pts += etas
            windows.append({"eta_star": n.eta_star, "lambda_star": n.lambda_star,
                            "branches": [list(b) for b in n.branches],
                            "status": n.status, "psi": [float(p) for p in psis],
                            "eta": [float(e) for e in etas]})
    grid = np.unique(np.round(np.array(pts), 15))
    # keep the exact endpoints and node abscissae
    grid[0], grid[-1] = -_PI, _PI
    return grid, windows


def _solve_all(assembler, etas, bands, tol, dense_ceiling, workers):
    def one(eta):
        try:
            r = solve_lowest(assembler(eta), bands, tol=tol, dense_ceiling=dense_ceiling,
                             vectors=False)
        except Exception as exc:  # annotate and re-raise in grid order
            return SweepError(eta, exc)
        return r

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, etas))
    else:
        results = [one(e) for e in etas]
    for r in results:
        if isinstance(r, SweepError):
            raise r
    return results


def sweep(spec: CellSpec, eta_samples: int, bands: int, mesh_h: float,
          grading: float = 1.3, h_max: Optional[float] = None,
          psi_max: float = PSI_MAX, window_samples: int = WINDOW_SAMPLES,
          workers: int = 1, tol: float = SOLVER_TOL,
          dense_ceiling: int = SWEEP_DENSE_CEILING,
          mesh: Optional[PeriodicMesh] = None,
          estimate_errors: bool = True) -> DispersionDataset:
    """Lowest ``bands`` eigenvalues on the uniform-plus-window eta grid.

    With ``estimate_errors`` the band edges are re-solved on the uniformly
    refined mesh and ``|Lambda_h - Lambda_{h/2}| * 4/3`` is stored per band
    edge; ``extract_bands_gaps`` uses it for the gap tolerance.
    """
    if bands < 1:
        raise ValueError("bands must be positive")
    if mesh is None:
        mesh = mesh_cell(spec, mesh_h, grading=grading, h_max=h_max)
    grid, windows = eta_grid(spec.H, spec.epsilon, eta_samples, bands, psi_max, window_samples)
    asm = BlochAssembler(mesh)
    res = _solve_all(asm, grid, bands, tol, dense_ceiling, workers)
    vals = np.array([r.values for r in res])
    resid = np.array([float(np.max(r.residuals)) for r in res])
    meta = {"h": mesh.h, "target_h": mesh_h, "grading": grading,
            "n_vertices": mesh.n_vertices, "dofs": asm.ndof,
            "min_angle": mesh.quality, "N": spec.N,
            "eta_samples": eta_samples}
    ds = DispersionDataset(grid, vals, spec.H, spec.epsilon, meta, windows, resid)
    if estimate_errors:
        ds.edge_errors = edge_error_estimates(ds, mesh, tol=tol, dense_ceiling=dense_ceiling)
    return ds


def _edge_indices(col: np.ndarray) -> tuple:
    return int(np.argmin(col)), int(np.argmax(col))


def edge_error_estimates(ds: DispersionDataset, mesh: PeriodicMesh,
                         tol: float = SOLVER_TOL,
                         dense_ceiling: int = SWEEP_DENSE_CEILING) -> dict:
    """Per band ``{p: {"lo": err, "hi": err}}`` from an h/2 re-solve at the edges."""
    fine = BlochAssembler(refine_uniform(mesh))
    need = {}
    for p in range(ds.bands):
        i_lo, i_hi = _edge_indices(ds.values[:, p])
        need.setdefault(i_lo, []).append((p, "lo"))
        need.setdefault(i_hi, []).append((p, "hi"))
    out = {p + 1: {} for p in range(ds.bands)}
    for i in sorted(need):
        r = solve_lowest(fine(ds.eta_grid[i]), ds.bands, tol=tol,
                         dense_ceiling=dense_ceiling, vectors=False)
        for p, side in need[i]:
            out[p + 1][side] = abs(ds.values[i, p] - r.values[p]) * 4.0 / 3.0
    return out


@dataclass(frozen=True)
class Band:
    p: int
    lo: float
    hi: float
    argmin: float
    argmax: float


@dataclass(frozen=True)
class Gap:
    p: int
    lower: float
    upper: float
    open: bool
    tolerance: float

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _parabolic(grid: np.ndarray, col: np.ndarray, i: int, sign: float) -> tuple:
    """Refined extremum of ``sign * col`` near index ``i`` (max if sign > 0)."""
    n = len(grid)
    period = grid[-1] - grid[0]
    # neighbours with periodic wrap; grid[0] and grid[-1] are the same point
    if i == 0 or i == n - 1:
        x = np.array([grid[-2], grid[-1], grid[1] + period])
        y = np.array([col[-2], col[-1], col[1]])
    else:
        x = grid[i - 1:i + 2].copy()
        y = col[i - 1:i + 2].copy()
    best = (float(col[i]), float(grid[i]))
    A = np.vander(x - x[1], 3)
    try:
        c2, c1, c0 = np.linalg.solve(A, y)
    except np.linalg.LinAlgError:
        return best
    if sign * c2 >= 0:
        return best
    xv = -c1 / (2 * c2)
    if not (x[0] - x[1]) <= xv <= (x[2] - x[1]):
        return best
    yv = c0 - c1 * c1 / (4 * c2)
    if sign * yv < sign * best[0]:
        return best
    e = float(x[1] + xv)
    if e > _PI:
        e -= 2 * _PI
    elif e < -_PI:
        e += 2 * _PI
    return float(yv), e


def extract_bands_gaps(ds: DispersionDataset, count: int,
                       gap_tolerance: Optional[float] = None) -> tuple:
    """Bands ``1..count`` and the gaps between consecutive bands.

    The default gap tolerance is ``3x`` the larger stored edge error of the
    two facing edges (never below ``1e-9 * edge``); a gap is open only if it
    exceeds it.
    """
    if ds.bands < count:
        raise ValueError(f"dataset has {ds.bands} bands, {count} requested")
    bands = []
    for p in range(count):
        col = ds.values[:, p]
        i_lo, i_hi = _edge_indices(col)
        lo, alo = _parabolic(ds.eta_grid, col, i_lo, -1.0)
        hi, ahi = _parabolic(ds.eta_grid, col, i_hi, +1.0)
        bands.append(Band(p + 1, lo, hi, alo, ahi))
    gaps = []
    for p in range(count - 1):
        lower, upper = bands[p].hi, bands[p + 1].lo
        if gap_tolerance is None:
            e1 = ds.edge_errors.get(p + 1, {}).get("hi", 0.0)
            e2 = ds.edge_errors.get(p + 2, {}).get("lo", 0.0)
            tol = GAP_TOL_FACTOR * max(e1, e2)
        else:
            tol = gap_tolerance
        tol = max(tol, 1e-9 * max(abs(lower), 1.0))
        gaps.append(Gap(p + 1, lower, upper, bool(upper - lower > tol), tol))
    return bands, gaps


def _window_for(ds: DispersionDataset, node_id: str) -> Optional[dict]:
    eta_star, lam = NODES[node_id]
    for w in ds.windows:
        if abs(w["eta_star"] - eta_star) < 1e-12 and abs(w["lambda_star"] - lam) < 1e-9 * lam:
            return w
    return None


def node_residuals(ds: DispersionDataset, cc: CellConstants, node_id: str,
                   psis=None) -> dict:
    """``r(psi) = Lambda_p(eta_star + eps psi) - node - eps Lambda'_(-/+)(psi)``."""
    w = _window_for(ds, node_id)
    if w is None:
        raise ValueError(f"dataset has no window around the {node_id} node")
    eps = ds.epsilon
    lam0 = NODES[node_id][1]
    pm, pp = node_branch_indices(node_id)
    rows = []
    for psi, eta in zip(w["psi"], w["eta"]):
        if psis is not None and not any(abs(psi - q) < 1e-9 for q in psis):
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ValidityRangeWarning)
            nc = correction_node(cc, node_id, psi)
        lm = ds.value_at(eta, pm)
        lp = ds.value_at(eta, pp)
        rows.append({"psi": psi, "eta": eta,
                     "lambda_minus": lm, "lambda_plus": lp,
                     "r_minus": lm - lam0 - eps * nc.lambda_prime_minus,
                     "r_plus": lp - lam0 - eps * nc.lambda_prime_plus})
    if not rows:
        raise ValueError("no window samples at the requested psi values")
    rmax = max(max(abs(r["r_minus"]), abs(r["r_plus"])) for r in rows)
    return {"node": node_id, "epsilon": eps, "rows": rows,
            "max_abs_residual": rmax, "fit_C": rmax / eps ** 2}


def away_from_nodes(ds: DispersionDataset, count: Optional[int] = None,
                    uniform: Optional[int] = None) -> dict:
    """Distance of each computed eigenvalue to the nearest limit curve.

    Only the uniform part of the grid is used (``uniform`` points, default
    all points not in a node window).  A value is flagged ambiguous when the
    two nearest limit curves are closer than twice the overall max residual.
    """
    count = count or ds.bands
    win = set()
    for w in ds.windows:
        win.update(round(e, 12) for e in w["eta"])
    if uniform:
        etas = np.linspace(-_PI, _PI, uniform)
    else:
        etas = [e for e in ds.eta_grid if round(e, 12) not in win]
    rows = []
    for e in etas:
        lim = [le.value for le in limit_eigenvalues(ds.H, float(e), count + 4)]
        for p in range(count):
            v = ds.value_at(float(e), p + 1)
            d = sorted(abs(v - x) for x in lim)
            rows.append((float(e), p + 1, d[0], d[1] if len(d) > 1 else math.inf, v))
    rmax = max(r[2] for r in rows)
    amb = [r for r in rows if r[3] - r[2] < 2 * rmax]
    scale = ds.epsilon if ds.epsilon > 0 else 1.0
    return {"max_residual": rmax, "max_residual_over_eps": rmax / scale,
            "n_points": len(etas), "ambiguous": len(amb)}


def lowest_pair_closeness(ds: DispersionDataset, samples: Optional[int] = None) -> dict:
    """Max over a uniform grid of ``|Lambda_1 - eta^2|`` and
    ``min_(+-) |Lambda_2 - (eta +- 2 pi)^2|``; the grid must be part of ``ds``."""
    samples = samples or ds.mesh_meta.get("eta_samples", 33)
    worst, at = 0.0, None
    for e in np.linspace(-_PI, _PI, samples):
        l1, l2 = ds.value_at(float(e), 1), ds.value_at(float(e), 2)
        r1 = abs(l1 - e * e)
        r2 = min(abs(l2 - (e + 2 * _PI) ** 2), abs(l2 - (e - 2 * _PI) ** 2))
        for r, p in ((r1, 1), (r2, 2)):
            if r > worst:
                worst, at = r, {"eta": float(e), "p": p}
    return {"max": worst, "at": at, "samples": samples}


def count_box_check(ds: DispersionDataset, delta1: float = 0.5, delta3: float = 0.5) -> dict:
    """Lower bounds on Lambda_2..Lambda_4 from the count boxes, checked on the grid."""
    K = count_box_constants(ds.H, delta1, delta3)
    out = {"constants": {k: K[k] for k in ("K1", "K2", "K3", "K4")}, "checks": {}}
    e = ds.eta_grid
    p2 = _PI ** 2

    def check(name, p, bound, mask):
        if p > ds.bands or K[name] is None or not np.any(mask):
            return
        v = ds.values[mask, p - 1]
        out["checks"][f"Lambda{p}>{name}"] = {"min": float(v.min()), "bound": bound,
                                              "ok": bool(v.min() > bound)}

    if K["K1"] is not None:
        check("K1", 2, p2 + K["K1"], np.abs(e) <= _PI - delta1 + 1e-12)
        check("K2", 3, p2 + K["K2"], np.ones_like(e, bool))
    if K["K3"] is not None:
        check("K3", 3, 4 * p2 + K["K3"], np.abs(e) >= delta3 - 1e-12)
        check("K4", 4, 4 * p2 + K["K4"], np.ones_like(e, bool))
    out["ok"] = all(c["ok"] for c in out["checks"].values())
    return out


def compare_asymptotics(ds: DispersionDataset, cc: CellConstants,
                        predictions=None) -> dict:
    """Comparison report: node fits, gap widths, away-from-node closeness, boxes."""
    if abs(ds.H - cc.H) > 1e-12:
        raise ValueError("dataset and cell constants describe different heights")
    eps = ds.epsilon
    if predictions is None:
        predictions, omitted = predicted_gaps(cc, eps)
    else:
        omitted = {}
    count = min(ds.bands, 1 + max([g.p for g in predictions], default=0))
    bands, gaps = extract_bands_gaps(ds, count) if count >= 2 else ([], [])
    report = {"H": ds.H, "epsilon": eps, "mesh": ds.mesh_meta,
              "cell_constants": {"m1": cc.m1, "m2": cc.m2, "M_Xi": cc.M_Xi,
                                 "area_omega": cc.area_omega},
              "nodes": {}, "gaps": [], "omitted": {str(k): v for k, v in omitted.items()}}
    for node_id in ("square", "circ"):
        if _window_for(ds, node_id) is None:
            continue
        pm, pp = node_branch_indices(node_id)
        if pp > ds.bands:
            continue
        report["nodes"][node_id] = node_residuals(ds, cc, node_id)
    for pred in predictions:
        g = next((g for g in gaps if g.p == pred.p), None)
        if g is None:
            continue
        measured = g.width
        report["gaps"].append({
            "p": pred.p, "lower": g.lower, "upper": g.upper, "open": g.open,
            "tolerance": g.tolerance, "width": measured,
            "width_over_eps": measured / eps, "predicted_width_slope": pred.width_slope,
            "relative_deviation": measured / eps / pred.width_slope - 1.0,
            "predicted_lower_edge": pred.lower_edge_bound,
            "predicted_upper_edge": pred.upper_edge_bound,
        })
    report["away_from_nodes"] = away_from_nodes(ds)
    if ds.bands >= 2:
        try:
            report["lowest_pair_closeness"] = lowest_pair_closeness(ds)
        except KeyError:
            pass
    report["count_boxes"] = count_box_check(ds)
    sq = report["nodes"].get("square")
    if sq is not None:
        C = sq["fit_C"]
        l1, l2 = ds.value_at(_PI, 1), ds.value_at(_PI, 2)
        b1 = _PI ** 2 - 4 * _PI ** 2 * eps * cc.m1 + C * eps ** 2
        b2 = _PI ** 2 + 2 * _PI ** 2 * eps * cc.area_omega / cc.H - C * eps ** 2
        report["square_bracketing"] = {"lambda1": l1, "upper_bound": b1,
                                       "lambda2": l2, "lower_bound": b2,
                                       "ok": bool(l1 <= b1 and l2 >= b2)}
    report["simple_correction_example"] = {
        "branch": [0, 0], "eta": _PI / 2,
        "lambda_prime": correction_simple(cc, 0, 0, _PI / 2)}
    return report
