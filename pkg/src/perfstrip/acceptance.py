"""The acceptance suite: ten checks with their stated tolerances.

Used by ``tests/test_acceptance.py`` and by ``perfstrip verify``.  Expensive
sweeps are shared between criteria through ``Context``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .asymptotics import predicted_gaps
from .band_sweep import (sweep, extract_bands_gaps, node_residuals,
                         lowest_pair_closeness, count_box_check)
from .cell_constants import compute_cell_constants, reference_strip
from .fem import BlochAssembler, residual_certificate, solve_lowest
from .geometry import CellSpec, HoleShape
from .limit_model import limit_eigenvalues
from .meshgen import mesh_cell, refine_uniform

_PI = math.pi
H_REF = 0.4
DISK = HoleShape("disk", (0.0, 0.2), (0.08,))
# Richardson extrapolation on nested strip meshes (h = 0.004 and h/2),
# see tests/oracles/cell_constants_richardson.py
M1_ORACLE = 0.057856163659887876
MXI_ORACLE = 0.015425498179905696
STRIP_H = 0.0025
EPSILONS = (4, 8, 16)
CELL_H_FACTOR = 0.01  # cell mesh size near the holes is CELL_H_FACTOR * eps


@dataclass
class Result:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] criterion {self.number:2d}: {self.title} ({self.seconds:.1f}s) {self.detail}"


@dataclass
class Context:
    cc: Optional[object] = None
    sweeps: dict = field(default_factory=dict)
    workers: int = 1

    def constants(self):
        if self.cc is None:
            self.cc = compute_cell_constants(reference_strip(DISK, H_REF), STRIP_H)
        return self.cc

    def dataset(self, N: int):
        if N not in self.sweeps:
            spec = CellSpec(H_REF, N, DISK)
            self.sweeps[N] = sweep(spec, 33, 4, CELL_H_FACTOR / N, workers=self.workers)
        return self.sweeps[N]


def _limit(H, eta, count):
    return np.array([e.value for e in limit_eigenvalues(H, eta, count)])


def criterion_1(ctx: Context) -> tuple:
    mesh = mesh_cell(CellSpec(H_REF, 0), 0.01)
    fine = refine_uniform(mesh)
    worst, ratios = 0.0, []
    for eta in (0.0, _PI / 2, _PI):
        exact = _limit(H_REF, eta, 5)
        e1 = solve_lowest(BlochAssembler(mesh)(eta), 5).values
        e2 = solve_lowest(BlochAssembler(fine)(eta), 5).values
        err1, err2 = np.abs(e1 - exact), np.abs(e2 - exact)
        rel = err1 / np.maximum(exact, 1.0)
        worst = max(worst, float(rel.max()))
        for a, b in zip(err1, err2):
            if a > 1e-8:
                ratios.append(a / b)
    ok = worst <= 1e-3 and all(3.5 <= r <= 4.5 for r in ratios)
    return ok, (f"max rel error {worst:.2e} (<=1e-3); h->h/2 ratios "
                f"[{min(ratios):.3f}, {max(ratios):.3f}] (in [3.5, 4.5])")


def criterion_2(ctx: Context) -> tuple:
    mesh = mesh_cell(CellSpec(H_REF, 0), 0.01)
    v = solve_lowest(BlochAssembler(mesh)(_PI), 2).values
    p2 = _PI ** 2
    d_pair = abs(v[1] - v[0]) / p2
    d_ref = max(abs(v[0] - p2), abs(v[1] - p2)) / p2
    ok = d_pair <= 1e-3 and d_ref <= 1e-3
    return ok, f"Lambda1,2(pi) = {v[0]:.8f}, {v[1]:.8f}; pair {d_pair:.1e}, vs pi^2 {d_ref:.1e}"


def criterion_3(ctx: Context) -> tuple:
    cc = ctx.constants()
    d = cc.diagnostics
    lower = _PI * 0.0064 / 0.8
    checks = {
        "m1 routes within 1%": abs(d["m1_energy"] - d["m1_farfield"]) <= 0.01 * abs(d["m1_energy"]),
        "m1 >= |omega|/2H": cc.m1 >= lower,
        "|m2| <= 1e-2 m1": abs(cc.m2) <= 1e-2 * cc.m1,
        "M_Xi > 0": cc.M_Xi > 0,
        "decay": d["decay_check"]["W1_0"]["ok"],
        "m1 vs oracle 1%": abs(cc.m1 - M1_ORACLE) <= 0.01 * M1_ORACLE,
        "M_Xi vs oracle 1%": abs(cc.M_Xi - MXI_ORACLE) <= 0.01 * MXI_ORACLE,
    }
    bad = [k for k, v in checks.items() if not v]
    return not bad, (f"m1={cc.m1:.6f} (oracle {M1_ORACLE:.6f}), M_Xi={cc.M_Xi:.6f} "
                     f"(oracle {MXI_ORACLE:.6f}), m2={cc.m2:.1e}, decay rate "
                     f"{d['decay_check']['W1_0']['rate']:.2f}" + (f"; failed: {bad}" if bad else ""))


def _gap_series(ctx: Context, p: int):
    cc = ctx.constants()
    out = []
    for N in EPSILONS:
        ds = ctx.dataset(N)
        _, gaps = extract_bands_gaps(ds, p + 1)
        preds, _ = predicted_gaps(cc, 1.0 / N)
        slope = next(g.width_slope for g in preds if g.p == p)
        g = gaps[p - 1]
        out.append((N, g.width * N, slope, g.open))
    return out


def criterion_4(ctx: Context) -> tuple:
    s = _gap_series(ctx, 1)
    devs = [abs(w / sl - 1) for _, w, sl, _ in s]
    mono = all(b < a for a, b in zip(devs, devs[1:]))
    ok = mono and devs[-1] <= 0.15 and all(o for *_, o in s)
    txt = ", ".join(f"eps=1/{N}: {w:.4f}" for N, w, _, _ in s)
    return ok, (f"width/eps {txt}; predicted {s[0][2]:.4f}; deviations "
                + ", ".join(f"{d:.2%}" for d in devs))


def criterion_5(ctx: Context) -> tuple:
    s2 = _gap_series(ctx, 2)
    s1 = _gap_series(ctx, 1)
    dev = abs(s2[-1][1] / s2[-1][2] - 1)
    ratio = s2[-1][1] / s1[-1][1]
    ok = dev <= 0.15 and abs(ratio / 4 - 1) <= 0.10 and s2[-1][3]
    return ok, (f"width/eps at 1/16 {s2[-1][1]:.4f} vs {s2[-1][2]:.4f} ({dev:.2%}); "
                f"slope ratio {ratio:.3f} (4 within 10%)")


def criterion_6(ctx: Context) -> tuple:
    psis = (-4, -2, 0, 2, 4)
    cc = ctx.constants()
    parts, ok = [], True
    for node in ("square", "circ"):
        c8 = node_residuals(ctx.dataset(8), cc, node, psis)["fit_C"]
        c16 = node_residuals(ctx.dataset(16), cc, node, psis)["fit_C"]
        r = max(c8, c16) / min(c8, c16)
        ok &= math.isfinite(c8) and math.isfinite(c16) and r < 2
        parts.append(f"{node}: C(1/8)={c8:.2f}, C(1/16)={c16:.2f}, factor {r:.2f}")
    return ok, "; ".join(parts)


def criterion_7(ctx: Context) -> tuple:
    m = {N: lowest_pair_closeness(ctx.dataset(N))["max"] for N in EPSILONS}
    r1 = m[4] / m[8]
    r2 = m[8] / m[16]
    ok = 1.5 <= r1 <= 3 and 1.5 <= r2 <= 3
    return ok, (f"max deviation {m[4]:.4f}, {m[8]:.4f}, {m[16]:.4f}; "
                f"halving ratios {r1:.2f}, {r2:.2f} (in [1.5, 3])")


def criterion_8(ctx: Context, trials: int = 100, seed: int = 20240607) -> tuple:
    mesh = mesh_cell(CellSpec(H_REF, 0), math.sqrt(2) * 0.1)
    system = BlochAssembler(mesh)(1.1)
    n = system.ndof
    K, M = system.K.toarray(), system.M.toarray()
    import scipy.linalg as sla

    lam = sla.eigh(K, M, eigvals_only=True)
    mu = 1.0 / (1.0 + lam)
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(trials):
        u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        mt = float(rng.uniform(0.0, 1.0))
        delta = residual_certificate(system, u, mt)
        if np.min(np.abs(mu - mt)) <= delta * (1 + 1e-12):
            hits += 1
    return hits == trials and n == 50, f"{hits}/{trials} intervals contain an eigenvalue ({n} DOFs)"


def criterion_9(ctx: Context) -> tuple:
    rep = count_box_check(ctx.dataset(16), 0.5, 0.5)
    c = rep["checks"]
    a = c["Lambda2>K1"]
    b = c["Lambda4>K4"]
    ok = a["ok"] and b["ok"]
    return ok, (f"min Lambda2 on |eta|<=pi-0.5: {a['min']:.4f} > {a['bound']:.4f}; "
                f"min Lambda4: {b['min']:.4f} > {b['bound']:.4f}")


def criterion_10(ctx: Context) -> tuple:
    sym = max(ctx.dataset(N).symmetry_defect() for N in EPSILONS)
    per = max(ctx.dataset(N).periodicity_defect() for N in EPSILONS)
    tilted = HoleShape("ellipse", (0.0, 0.2), (0.1, 0.05, 0.5))
    m2a = compute_cell_constants(reference_strip(tilted, H_REF), STRIP_H).m2
    flipped = tilted.reflected(H_REF)
    m2b = compute_cell_constants(reference_strip(flipped, H_REF), STRIP_H).m2
    flip = abs(m2a + m2b) / max(abs(m2a), 1e-300)
    ok = sym <= 1e-8 and per <= 1e-8 and flip <= 0.02 and abs(m2a) > 1e-6
    return ok, (f"eta/-eta defect {sym:.1e}, +-pi defect {per:.1e}; "
                f"m2 {m2a:.6f} vs reflected {m2b:.6f} (relative mismatch {flip:.1e})")


CRITERIA: list = [
    (1, "limit spectrum exactness", criterion_1),
    (2, "double point at eta = pi", criterion_2),
    (3, "cell constants consistency", criterion_3),
    (4, "gap 1 width law", criterion_4),
    (5, "gap 2 width law", criterion_5),
    (6, "node splitting profile", criterion_6),
    (7, "uniform O(eps) closeness", criterion_7),
    (8, "certificate soundness", criterion_8),
    (9, "count boxes", criterion_9),
    (10, "symmetry invariants", criterion_10),
]


def run(numbers=None, ctx: Optional[Context] = None,
        emit: Optional[Callable[[str], None]] = print) -> list:
    """Run the selected criteria (all by default); returns ``Result`` objects."""
    ctx = ctx or Context()
    out = []
    for number, title, fn in CRITERIA:
        if numbers and number not in numbers:
            continue
        t = time.perf_counter()
        try:
            ok, detail = fn(ctx)
        except Exception as exc:  # a crash is a failed criterion, not an abort
            ok, detail = False, f"error: {type(exc).__name__}: {exc}"
        r = Result(number, title, bool(ok), detail, time.perf_counter() - t)
        out.append(r)
        if emit:
            emit(r.line())
    return out
