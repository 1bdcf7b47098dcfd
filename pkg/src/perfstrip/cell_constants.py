"""Boundary-layer correctors on the truncated strip and the constants they define.

Two Neumann problems are solved on ``Xi_T = (-T, T) x (0, H)`` minus one
hole, periodic in ``xi_2`` and flux-free at ``xi_1 = +-T``:

* ``W1_0`` with ``d_nu W = -nu_1`` on the hole (``W1 = xi_1 + W1_0`` is the
  harmonic "dipole" field),
* ``W2`` with ``d_nu W = -nu_2``.

Both stabilize to constants at the two ends.  Half the jump between the end
averages gives ``m1`` and ``m2``; ``m1`` has a second route through the
Dirichlet energy and ``m2`` one through a boundary integral of ``W1``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .fem import assemble_real_neumann, solve_mean_zero
from .geometry import StripSpec, polygon_area, mirror_symmetry_defect, default_truncation
from .meshgen import PeriodicMesh, mesh_strip

CROSS_TOL = 0.01
SYMMETRY_TOL = 1e-6
DECAY_SLACK = 0.3


class TruncationError(RuntimeError):
    """Two routes to the same constant disagree: enlarge T or refine."""


class DecayError(ValueError):
    """Not enough columns to fit a decay rate."""


@dataclass(frozen=True, eq=False)
class StripField:
    """P1 field on a strip mesh together with its end averages."""

    mesh: PeriodicMesh
    values: np.ndarray
    far_minus: float
    far_plus: float
    name: str = ""

    def energy(self) -> float:
        g = _gradients(self.mesh, self.values)
        return float(np.sum(self.mesh.triangle_areas() * np.sum(g * g, axis=1)))

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Linear interpolation at ``points`` (NaN outside the mesh)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        V, T = self.mesh.vertices, self.mesh.triangles
        tree = self.mesh.meta.get("_centroid_tree")
        if tree is None:
            tree = cKDTree(V[T].mean(axis=1))
            self.mesh.meta["_centroid_tree"] = tree
        k = min(16, len(T))
        _, cand = tree.query(pts, k=k)
        cand = np.atleast_2d(cand)
        out = np.full(len(pts), np.nan)
        for i, p in enumerate(pts):
            for t in cand[i]:
                a, b, c = V[T[t]]
                m = np.column_stack([b - a, c - a])
                l1, l2 = np.linalg.solve(m, p - a)
                l0 = 1 - l1 - l2
                if min(l0, l1, l2) >= -1e-10:
                    out[i] = self.values[T[t]] @ np.array([l0, l1, l2])
                    break
        return out

    def end_trace(self, side: str) -> tuple:
        """Sorted ``(xi_2, value)`` samples on the end ``side`` (left/right)."""
        e = self.mesh.tagged(side)
        idx = np.unique(e.ravel())
        order = np.argsort(self.mesh.vertices[idx, 1])
        idx = idx[order]
        return self.mesh.vertices[idx, 1], self.values[idx]


@dataclass
class DecayResult:
    rate: float
    ok: bool
    xi1: np.ndarray
    norms: np.ndarray
    expected: float


@dataclass
class CellConstants:
    m1: float
    m2: float
    M_Xi: float
    area_omega: float
    H: float
    diagnostics: dict = field(default_factory=dict)

    def to_json(self, **kw) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True, **kw)

    @classmethod
    def from_json(cls, text: str) -> "CellConstants":
        d = json.loads(text)
        return cls(d["m1"], d["m2"], d["M_Xi"], d["area_omega"], d["H"],
                   d.get("diagnostics", {}))

    @property
    def gap_coefficient(self) -> float:
        """``m1 + |omega| / (2H)``, the quantity governing both gap widths."""
        return self.m1 + self.area_omega / (2 * self.H)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


def _gradients(mesh: PeriodicMesh, values: np.ndarray) -> np.ndarray:
    V, T = mesh.vertices, mesh.triangles
    a, b, c = V[T[:, 0]], V[T[:, 1]], V[T[:, 2]]
    u = values[T]
    d1, d2 = b - a, c - a
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    du1, du2 = u[:, 1] - u[:, 0], u[:, 2] - u[:, 0]
    gx = (du1 * d2[:, 1] - du2 * d1[:, 1]) / det
    gy = (du2 * d1[:, 0] - du1 * d2[:, 0]) / det
    return np.column_stack([gx, gy])


def _end_average(mesh: PeriodicMesh, values: np.ndarray, side: str, H: float) -> float:
    # exact integral of the P1 trace over the end segment
    e = mesh.tagged(side)
    y = mesh.vertices[e, 1]
    return float(np.sum(np.abs(y[:, 1] - y[:, 0]) * values[e].mean(axis=1)) / H)


def _hole_polygon(mesh: PeriodicMesh) -> np.ndarray:
    polys = mesh.meta.get("polygons") or []
    return polys[0] if polys else np.zeros((0, 2))


def _strip_mesh(strip: StripSpec, target_h: float, grading: float, mesh):
    if mesh is not None:
        return mesh
    strip.validate()
    return mesh_strip(strip, target_h, grading=grading)


def _solve(mesh: PeriodicMesh, data: str, H: float, name: str) -> StripField:
    w = solve_mean_zero(assemble_real_neumann(mesh, data))
    return StripField(mesh, w, _end_average(mesh, w, "left", H),
                      _end_average(mesh, w, "right", H), name)


def solve_W1(strip: StripSpec, target_h: float, grading: float = 1.3,
             mesh: Optional[PeriodicMesh] = None) -> tuple:
    """Solve for ``W1_0`` and return ``(field, partial)``.

    ``partial`` holds ``m1_energy = (||grad W1_0||^2 + |omega|) / (2H)``,
    ``m1_farfield = (C+ - C-) / 2`` and ``area_omega`` (shoelace area of the
    meshed hole polygon).  For the Galerkin solution both routes agree up to
    solver round-off, because ``xi_1`` lies in the P1 space; a disagreement
    flags a broken solve rather than discretization error.
    """
    mesh = _strip_mesh(strip, target_h, grading, mesh)
    H = strip.H
    f = _solve(mesh, "-nu1", H, "W1_0")
    area = polygon_area(_hole_polygon(mesh)) if mesh.n_holes else 0.0
    energy = f.energy()
    partial = {
        "m1_energy": (energy + area) / (2 * H),
        "m1_farfield": 0.5 * (f.far_plus - f.far_minus),
        "energy_W1_0": energy,
        "area_omega": area,
    }
    return f, partial


def _boundary_integral_nu2(mesh: PeriodicMesh, values: np.ndarray) -> float:
    """``int_{hole} values * nu_2 ds`` for a P1 trace (exact on polygons)."""
    e = mesh.hole_edges()
    if not len(e):
        return 0.0
    p, q = mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]
    # outward normal (dy, -dx)/L, so nu_2 ds = -dx
    return float(np.sum(-(q[:, 0] - p[:, 0]) * values[e].mean(axis=1)))


def solve_W2(strip: StripSpec, target_h: float, grading: float = 1.3,
             mesh: Optional[PeriodicMesh] = None,
             w1: Optional[StripField] = None) -> tuple:
    """Solve for ``W2``; return ``(field, partial)`` with ``M_Xi`` and ``m2`` twice.

    ``m2_boundary_integral = -(1/2H) int_{hole} (xi_1 + W1_0) nu_2 ds`` needs
    ``W1_0`` on the same mesh; it is solved here when not supplied.
    """
    mesh = _strip_mesh(strip, target_h, grading, mesh)
    if w1 is not None and w1.mesh is not mesh:
        raise ValueError("w1 must live on the same mesh")
    H = strip.H
    f = _solve(mesh, "-nu2", H, "W2")
    if w1 is None:
        w1, _ = solve_W1(strip, target_h, mesh=mesh)
    W1 = mesh.vertices[:, 0] + w1.values
    partial = {
        "M_Xi": f.energy(),
        "m2_farfield": 0.5 * (f.far_plus - f.far_minus),
        "m2_boundary_integral": -_boundary_integral_nu2(mesh, W1) / (2 * H),
    }
    bot = mesh.tagged("bottom")
    trace = np.abs(f.values[np.unique(bot.ravel())]).max() if len(bot) else 0.0
    partial["trace_W2_bottom"] = float(trace)
    partial["trace_W2_relative"] = float(trace / max(np.abs(f.values).max(), 1e-300))
    return f, partial


def decay_check(field: StripField, strip: StripSpec, columns: int = 24,
                samples: int = 64) -> DecayResult:
    """Fit the exponential decay of ``field - far-field constant`` towards the ends.

    Per-column L2 norms (trapezoid rule on ``samples`` points) are taken on
    ``columns`` abscissae in ``T/2 <= |xi_1| <= T - H`` on both sides; the
    rate is the least-squares slope of ``log(norm)`` against ``|xi_1|``.
    The check passes if the rate is at most ``-(2 pi / H)(1 - 0.3)``.
    """
    T, H = strip.T, strip.H
    lo, hi = T / 2, T - H
    if hi - lo <= 0 or columns < 3:
        raise DecayError(f"no room for columns: [T/2, T-H] = [{lo:.3g}, {hi:.3g}]")
    xs = np.linspace(lo, hi, columns)
    ys = np.linspace(0.0, H, samples)
    rows, norms = [], []
    for sgn, const in ((1.0, field.far_plus), (-1.0, field.far_minus)):
        P = np.array([(sgn * x, y) for x in xs for y in ys])
        v = field.evaluate(P).reshape(columns, samples) - const
        if np.isnan(v).any():
            raise DecayError("decay columns leave the mesh")
        norms.append(np.sqrt(np.trapezoid(v * v, ys, axis=1)))
        rows.append(xs)
    x = np.concatenate(rows)
    n = np.concatenate(norms)
    scale = max(np.abs(field.values).max(), 1e-300)
    tiny = 1e-13 * scale
    if np.all(n <= tiny):
        rate = 0.0
    else:
        rate = float(np.polyfit(x, np.log(np.maximum(n, tiny)), 1)[0])
    expected = -2 * math.pi / H
    return DecayResult(rate, bool(rate <= expected * (1 - DECAY_SLACK)), x, n, expected)


def compute_cell_constants(strip: StripSpec, target_h: float, grading: float = 1.3,
                           cross_tol: float = CROSS_TOL,
                           symmetry_tol: float = SYMMETRY_TOL,
                           mesh: Optional[PeriodicMesh] = None,
                           strict: bool = True) -> CellConstants:
    """All boundary-layer constants with both routes and truncation diagnostics.

    Raises ``TruncationError`` when the two ``m1`` routes differ by more
    than ``cross_tol`` (relative) and ``strict`` is set; the same check is
    applied to ``m2`` against ``cross_tol * m1``.
    """
    if strip.hole is None:
        raise ValueError("cell constants need a hole")
    mesh = _strip_mesh(strip, target_h, grading, mesh)
    w1, p1 = solve_W1(strip, target_h, mesh=mesh)
    w2, p2 = solve_W2(strip, target_h, mesh=mesh, w1=w1)
    d1 = decay_check(w1, strip)
    d2 = decay_check(w2, strip)
    m1e, m1f = p1["m1_energy"], p1["m1_farfield"]
    rel = abs(m1e - m1f) / max(abs(m1e), 1e-300)
    m2f, m2b = p2["m2_farfield"], p2["m2_boundary_integral"]
    sym = mirror_symmetry_defect(strip.hole, strip.H)
    diag = {
        "T": strip.T,
        "h": mesh.h,
        "target_h": target_h,
        "grading": grading,
        "n_vertices": mesh.n_vertices,
        "m1_energy": m1e,
        "m1_farfield": m1f,
        "m1_cross_rel": rel,
        "m2_farfield": m2f,
        "m2_boundary_integral": m2b,
        "trace_W2_relative": p2["trace_W2_relative"],
        "decay_check": {"W1_0": {"rate": d1.rate, "ok": d1.ok},
                        "W2": {"rate": d2.rate, "ok": d2.ok},
                        "expected_rate": d1.expected},
        "truncation_bound_rel": 10 * math.exp(-2 * math.pi * strip.T / strip.H),
        "symmetry_defect": sym,
        "mirror_symmetric": bool(sym <= 10 * strip.hole.tolerance),
        "hole": {"kind": strip.hole.kind, "center": list(strip.hole.center),
                 "params": list(strip.hole.params)},
    }
    if strict:
        if rel > cross_tol:
            raise TruncationError(
                f"m1 routes disagree by {rel:.2e} (> {cross_tol}); enlarge T or refine h")
        if abs(m2f - m2b) > cross_tol * m1e:
            raise TruncationError(
                f"m2 routes disagree: {m2f:.3e} vs {m2b:.3e}; enlarge T or refine h")
    diag["m2_symmetry_ok"] = bool(not diag["mirror_symmetric"]
                                  or abs(m2f) <= symmetry_tol * max(1.0, m1e))
    return CellConstants(m1e, m2f, p2["M_Xi"], p1["area_omega"], strip.H, diag)


def richardson(coarse: float, fine: float, order: int = 2) -> float:
    """Extrapolant ``(2^p fine - coarse) / (2^p - 1)`` for an O(h^p) quantity."""
    f = 2.0 ** order
    return (f * fine - coarse) / (f - 1)


def reference_strip(hole, H: float, T: Optional[float] = None) -> StripSpec:
    """Strip with the default truncation length unless ``T`` is given."""
    return StripSpec(H, hole, default_truncation(hole, H) if T is None else T)
