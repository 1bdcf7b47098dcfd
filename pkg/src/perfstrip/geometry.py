"""Strip, hole and periodicity-cell geometry.

Holes are described in the coordinates of the unit boundary-layer strip
``0 < xi_2 < H`` and approximated by closed counterclockwise polygons.
The same hole is reused for the perforated cell, where the k-th copy is
scaled by ``eps = 1/N`` and shifted upwards by ``eps * k * H``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

HOLE_KINDS = ("disk", "ellipse", "star")


class GeometryError(ValueError):
    """Invalid hole, cell or strip description."""


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for counterclockwise vertices)."""
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_cross(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Pairwise proper-or-touching intersection test between two segment sets.

    ``p`` and ``q`` have shape (n, 2, 2) and (m, 2, 2); returns an (n, m)
    boolean matrix.
    """
    a, b = p[:, None, 0, :], p[:, None, 1, :]
    c, d = q[None, :, 0, :], q[None, :, 1, :]

    def orient(u, v, w):
        return (v[..., 0] - u[..., 0]) * (w[..., 1] - u[..., 1]) - (
            v[..., 1] - u[..., 1]
        ) * (w[..., 0] - u[..., 0])

    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    return (o1 * o2 <= 0) & (o3 * o4 <= 0)


def is_simple_polygon(poly: np.ndarray) -> bool:
    n = len(poly)
    if n < 3:
        return False
    seg = np.stack([poly, np.roll(poly, -1, axis=0)], axis=1)
    hit = _segments_cross(seg, seg)
    idx = np.arange(n)
    # adjacent edges share a vertex by construction
    hit[idx, idx] = False
    hit[idx, (idx + 1) % n] = False
    hit[(idx + 1) % n, idx] = False
    return not hit.any()


def _point_segment_distance(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Distance from each point to the closed polyline ``poly``."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a
    ap = pts[:, None, :] - a[None, :, :]
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("kij,ij->ki", ap, ab) / denom, 0.0, 1.0)
    proj = a[None] + t[..., None] * ab[None]
    d = np.linalg.norm(pts[:, None, :] - proj, axis=2)
    return d.min(axis=1)


def hausdorff_polylines(p: np.ndarray, q: np.ndarray) -> float:
    return float(
        max(_point_segment_distance(p, q).max(), _point_segment_distance(q, p).max())
    )


def point_in_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd rule test for an (n, 2) array of points."""
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    x0, y0 = poly[:, 0][None], poly[:, 1][None]
    x1, y1 = np.roll(poly[:, 0], -1)[None], np.roll(poly[:, 1], -1)[None]
    cond = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    return (cond & (x < xc)).sum(axis=1) % 2 == 1


@dataclass(frozen=True)
class HoleShape:
    """A smooth hole in strip coordinates.

    ``params`` depend on ``kind``:

    * ``disk``: ``(radius,)``
    * ``ellipse``: ``(a, b)`` or ``(a, b, angle)`` with semi-axes along the
      rotated axes
    * ``star``: ``(r0, amplitude, frequency)`` or with a trailing phase;
      the boundary is ``r0 * (1 + amplitude * cos(frequency * (t - phase)))``

    ``boundary_tolerance`` is the maximal chord-sagitta error of the
    polygonal approximation; ``None`` means ``1e-3 * diameter``.
    """

    kind: str
    center: tuple = (0.0, 0.5)
    params: tuple = (0.1,)
    boundary_tolerance: Optional[float] = None

    def __post_init__(self):
        if self.kind not in HOLE_KINDS:
            raise GeometryError(f"unknown hole kind {self.kind!r}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        p = self.params
        if self.kind == "disk":
            if len(p) != 1 or p[0] <= 0:
                raise GeometryError("disk needs one positive radius")
        elif self.kind == "ellipse":
            if len(p) not in (2, 3) or p[0] <= 0 or p[1] <= 0:
                raise GeometryError("ellipse needs two positive semi-axes")
        else:
            if len(p) not in (3, 4) or p[0] <= 0:
                raise GeometryError("star needs (r0, amplitude, frequency[, phase])")
            if not 0 <= abs(p[1]) < 1:
                raise GeometryError("star amplitude must satisfy |amplitude| < 1")
            if p[2] != int(p[2]) or p[2] < 0:
                raise GeometryError("star frequency must be a nonnegative integer")
        if self.boundary_tolerance is not None and self.boundary_tolerance <= 0:
            raise GeometryError("boundary_tolerance must be positive")

    @property
    def tolerance(self) -> float:
        if self.boundary_tolerance is not None:
            return self.boundary_tolerance
        return 1e-3 * self.diameter

    @property
    def diameter(self) -> float:
        p = self.params
        if self.kind == "disk":
            return 2 * p[0]
        if self.kind == "ellipse":
            return 2 * max(p[0], p[1])
        return 2 * p[0] * (1 + abs(p[1]))

    def point(self, t) -> np.ndarray:
        """Boundary point(s) at parameter ``t`` in ``[0, 2 pi)``, counterclockwise."""
        t = np.asarray(t, dtype=float)
        cx, cy = self.center
        p = self.params
        if self.kind == "disk":
            x, y = p[0] * np.cos(t), p[0] * np.sin(t)
        elif self.kind == "ellipse":
            ang = p[2] if len(p) == 3 else 0.0
            u, v = p[0] * np.cos(t), p[1] * np.sin(t)
            x = u * math.cos(ang) - v * math.sin(ang)
            y = u * math.sin(ang) + v * math.cos(ang)
        else:
            phase = p[3] if len(p) == 4 else 0.0
            r = p[0] * (1 + p[1] * np.cos(p[2] * (t - phase)))
            x, y = r * np.cos(t), r * np.sin(t)
        return np.stack([cx + x, cy + y], axis=-1)

    def polygon(self, tolerance: Optional[float] = None,
                max_segment: Optional[float] = None) -> np.ndarray:
        """Adaptive polygon with sagitta <= tolerance and chords <= max_segment."""
        tol = self.tolerance if tolerance is None else tolerance
        seg_max = math.inf if max_segment is None else max_segment
        ts = list(np.linspace(0.0, 2 * np.pi, 9))
        out = [ts[0]]
        stack = [(ts[i], ts[i + 1]) for i in range(len(ts) - 1)][::-1]
        while stack:
            t0, t1 = stack.pop()
            a, b = self.point(t0), self.point(t1)
            tm = 0.5 * (t0 + t1)
            m = self.point(tm)
            chord = b - a
            L = float(np.hypot(*chord))
            sag = abs(chord[0] * (m[1] - a[1]) - chord[1] * (m[0] - a[0])) / max(L, 1e-300)
            if (sag > tol or L > seg_max) and t1 - t0 > 1e-9:
                stack.append((tm, t1))
                stack.append((t0, tm))
            else:
                out.append(t1)
        pts = self.point(np.array(out[:-1]))
        if polygon_area(pts) <= 0:
            raise GeometryError("degenerate hole: nonpositive polygon area")
        if not is_simple_polygon(pts):
            raise GeometryError("hole boundary polygon self-intersects")
        return pts

    def area(self, tolerance: Optional[float] = None) -> float:
        """Shoelace area of the boundary polygon."""
        return polygon_area(self.polygon(tolerance))

    def exact_area(self) -> float:
        p = self.params
        if self.kind == "disk":
            return math.pi * p[0] ** 2
        if self.kind == "ellipse":
            return math.pi * p[0] * p[1]
        # (1/2) int r^2 dt for r = r0 (1 + a cos(m t)), m >= 1
        if p[2] == 0:
            return math.pi * (p[0] * (1 + p[1])) ** 2
        return math.pi * p[0] ** 2 * (1 + 0.5 * p[1] ** 2)

    def reflected(self, H: float) -> "HoleShape":
        """Mirror image across the mid-line ``xi_2 = H/2``."""
        cx, cy = self.center
        p = self.params
        if self.kind == "disk":
            params = p
        elif self.kind == "ellipse":
            params = (p[0], p[1], -(p[2] if len(p) == 3 else 0.0))
        else:
            params = (p[0], p[1], p[2], -(p[3] if len(p) == 4 else 0.0))
        return HoleShape(self.kind, (cx, H - cy), params, self.boundary_tolerance)

    def translated(self, dx: float = 0.0, dy: float = 0.0) -> "HoleShape":
        cx, cy = self.center
        return HoleShape(self.kind, (cx + dx, cy + dy), self.params, self.boundary_tolerance)

    def check_in_strip(self, H: float, poly: Optional[np.ndarray] = None) -> None:
        poly = self.polygon() if poly is None else poly
        margin = 2 * self.tolerance
        lo, hi = poly[:, 1].min(), poly[:, 1].max()
        if lo <= margin or hi >= H - margin:
            raise GeometryError(
                f"hole closure must lie inside 0 < xi_2 < {H} "
                f"(polygon spans {lo:.6g}..{hi:.6g}, margin {margin:.3g})"
            )


def mirror_symmetry_defect(hole: HoleShape, H: float) -> float:
    """Hausdorff distance between the hole polygon and its mirror image in ``xi_2 = H/2``."""
    if H <= 0:
        raise GeometryError("H must be positive")
    poly = hole.polygon()
    mirrored = poly.copy()
    mirrored[:, 1] = H - mirrored[:, 1]
    return hausdorff_polylines(poly, mirrored[::-1])


@dataclass(frozen=True)
class CellSpec:
    """Perforated periodicity cell ``|x_1| < 1/2, 0 < x_2 < H`` with N holes.

    ``hole=None`` (or ``N=0``) gives the unperforated rectangle.
    """

    H: float
    N: int
    hole: Optional[HoleShape] = None

    @property
    def epsilon(self) -> float:
        return 1.0 / self.N if self.N > 0 else 0.0

    @property
    def perforated(self) -> bool:
        return self.hole is not None and self.N > 0


@dataclass(frozen=True)
class StripSpec:
    """Truncated boundary-layer strip ``(-T, T) x (0, H)`` minus one hole."""

    H: float
    hole: Optional[HoleShape]
    T: float

    def validate(self) -> None:
        if self.H <= 0 or self.T <= 0:
            raise GeometryError("H and T must be positive")
        if self.hole is None:
            return
        poly = self.hole.polygon()
        self.hole.check_in_strip(self.H, poly)
        if np.abs(poly[:, 0]).max() >= self.T - self.H:
            raise GeometryError(
                f"hole must lie inside |xi_1| < T - H = {self.T - self.H:.6g}"
            )


def default_truncation(hole: Optional[HoleShape], H: float) -> float:
    """Half-length making the exponential truncation error below 1e-6."""
    base = 1.5 * H * math.log(1e6) / (2 * math.pi)
    if hole is None:
        return base
    extent = float(np.abs(hole.polygon()[:, 0]).max())
    return max(4 * hole.diameter, base, extent + 2 * H)


def instantiate_cell(spec: CellSpec, tolerance: Optional[float] = None,
                     max_segment: Optional[float] = None) -> list:
    """The N scaled hole polygons of the perforated cell, bottom to top.

    ``max_segment`` is measured in cell coordinates.
    """
    if spec.H <= 0:
        raise GeometryError("H must be positive")
    if not spec.perforated:
        return []
    eps = spec.epsilon
    hole = spec.hole
    seg = None if max_segment is None else max_segment / eps
    base = hole.polygon(tolerance, seg)
    polys = [eps * base + np.array([0.0, eps * k * spec.H]) for k in range(spec.N)]

    for k in range(spec.N - 1):
        a, b = polys[k], polys[k + 1]
        sa = np.stack([a, np.roll(a, -1, axis=0)], axis=1)
        sb = np.stack([b, np.roll(b, -1, axis=0)], axis=1)
        if (_segments_cross(sa, sb).any() or point_in_polygon(b[:1], a).any()
                or point_in_polygon(a[:1], b).any()):
            raise GeometryError(f"hole copies k={k} and k={k + 1} overlap")
    for k, p in enumerate(polys):
        if np.abs(p[:, 0]).max() >= 0.5:
            raise GeometryError(f"hole copy k={k} touches the lateral cell walls")
        if p[:, 1].min() <= 0 or p[:, 1].max() >= spec.H:
            raise GeometryError(f"hole copy k={k} touches the cell boundary x_2 in {{0, H}}")
    for k, p in enumerate(polys):
        if p[:, 1].min() <= eps * k * spec.H or p[:, 1].max() >= eps * (k + 1) * spec.H:
            raise GeometryError(f"hole copy k={k} leaves its period of height eps*H")
    return polys


def dump_polygons_csv(polys: Sequence[np.ndarray], path) -> None:
    """Write ``k,x,y`` rows for each hole polygon."""
    with open(path, "w") as fh:
        fh.write("k,x,y\n")
        for k, p in enumerate(polys):
            for x, y in p:
                fh.write(f"{k},{x:.17g},{y:.17g}\n")
