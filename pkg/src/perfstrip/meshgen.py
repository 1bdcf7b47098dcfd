"""Conforming triangular meshes with exactly matched periodic traces.

Two domains are supported:

* the perforated periodicity cell ``(-1/2, 1/2) x (0, H)`` with left/right
  pairing (``mesh_cell``), and
* the truncated boundary-layer strip ``(-T, T) x (0, H)`` with bottom/top
  pairing (``mesh_strip``).

Holed domains are triangulated with Shewchuk's Triangle (constrained
Delaunay, minimum-angle refinement, no Steiner points on input segments);
the unperforated rectangle uses a structured right-triangle grid.  The
paired sides are discretized once and copied, so periodic vertex pairs
match bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import triangle
from scipy.spatial import cKDTree

from .geometry import CellSpec, StripSpec, GeometryError, instantiate_cell

MIN_ANGLE_FLOOR = 20.0
_QUALITY_SWITCH = "q28"
_MAX_REFINE_ROUNDS = 6


class MeshError(RuntimeError):
    """Mesh generation failed (quality floor, pairing or sizing)."""


@dataclass(frozen=True, eq=False)
class PeriodicMesh:
    """Triangulation with tagged boundary edges and periodic vertex pairs.

    ``edges`` holds boundary edges oriented with the domain on the left, so
    ``(dy, -dx)`` is the outward normal.  ``periodic_pairs[:, 0]`` are the
    master vertices (left side of the cell, bottom side of the strip).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_tags: tuple
    periodic_pairs: np.ndarray
    kind: str
    bounds: tuple
    n_holes: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)

    @property
    def h(self) -> float:
        """Maximal element diameter."""
        return float(self.edge_lengths().max())

    @property
    def quality(self) -> float:
        """Minimal interior angle in degrees."""
        return float(min_angles(self.vertices, self.triangles).min())

    def tagged(self, tag: str) -> np.ndarray:
        mask = np.array([t == tag for t in self.edge_tags], dtype=bool)
        return self.edges[mask]

    def hole_edges(self) -> np.ndarray:
        mask = np.array([t.startswith("hole") for t in self.edge_tags], dtype=bool)
        return self.edges[mask]

    def hole_edge_index(self) -> np.ndarray:
        """Hole number per boundary edge, -1 for rectangle sides."""
        return np.array(
            [int(t[5:-1]) if t.startswith("hole") else -1 for t in self.edge_tags]
        )

    def area(self) -> float:
        return float(self.triangle_areas().sum())


def min_angles(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    out = np.empty(len(triangles))
    angs = []
    for i in range(3):
        u = p[:, (i + 1) % 3] - p[:, i]
        v = p[:, (i + 2) % 3] - p[:, i]
        c = np.einsum("ij,ij->i", u, v) / (
            np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
        )
        angs.append(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
    out[:] = np.min(angs, axis=0)
    return out


def boundary_edges(triangles: np.ndarray) -> np.ndarray:
    """Edges used by exactly one triangle, oriented as in that (CCW) triangle."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    return e[counts[inv] == 1]


def _march(a: float, b: float, size: Callable[[float], float]) -> np.ndarray:
    """Points from ``a`` to ``b`` (inclusive) with local spacing <= size(t)."""
    ts = [a]
    t = a
    while True:
        step = size(t)
        # look ahead so the spacing also respects the size at the landing point
        step = min(step, size(min(t + step, b)))
        if t + step >= b - 1e-12 * abs(b - a):
            break
        t += step
        ts.append(t)
    ts = np.array(ts + [b])
    # spread the last (possibly short) interval over the whole run
    n = len(ts) - 1
    if n >= 2 and (ts[-1] - ts[-2]) < 0.5 * (ts[-2] - ts[-3]):
        ts = np.concatenate([ts[:-2], [b]])
        frac = (ts - a) / (ts[-1] - a)
        ts = a + frac * (b - a)
    return ts


def _size_field(points: np.ndarray, target_h: float, grading: float,
                h_max: float) -> Callable[[np.ndarray], np.ndarray]:
    if len(points) == 0 or grading <= 1.0:
        h0 = target_h if len(points) else h_max

        def uniform(x):
            x = np.atleast_2d(x)
            return np.full(len(x), h0)

        return uniform
    tree = cKDTree(points)

    def graded(x):
        x = np.atleast_2d(x)
        d, _ = tree.query(x)
        return np.minimum(h_max, target_h + (grading - 1.0) * d)

    return graded


def _tag_edges(verts, tris, seg, seg_tags, bounds):
    edges = boundary_edges(tris)
    lookup = {}
    for (i, j), tag in zip(seg, seg_tags):
        lookup[(min(i, j), max(i, j))] = tag
    tags = []
    x0, x1, y0, y1 = bounds
    scale = max(x1 - x0, y1 - y0)
    for i, j in edges:
        tag = lookup.get((min(i, j), max(i, j)))
        if tag is None:
            p, q = verts[i], verts[j]
            tol = 1e-12 * scale
            if abs(p[0] - x0) < tol and abs(q[0] - x0) < tol:
                tag = "left"
            elif abs(p[0] - x1) < tol and abs(q[0] - x1) < tol:
                tag = "right"
            elif abs(p[1] - y0) < tol and abs(q[1] - y0) < tol:
                tag = "bottom"
            elif abs(p[1] - y1) < tol and abs(q[1] - y1) < tol:
                tag = "top"
            else:
                raise MeshError(f"untagged boundary edge {i}-{j}")
        tags.append(tag)
    return edges, tuple(tags)


def _pair(verts, edges, tags, master, slave, axis, scale):
    """Pair vertices on two opposite sides by their coordinate along ``axis``."""

    def side(tag):
        idx = np.unique(edges[np.array([t == tag for t in tags])].ravel())
        return idx[np.argsort(verts[idx, axis], kind="stable")]

    m, s = side(master), side(slave)
    if len(m) != len(s) or np.abs(verts[m, axis] - verts[s, axis]).max(initial=0.0) > 1e-12 * scale:
        raise MeshError(
            f"periodic traces {master}/{slave} do not match "
            f"({len(m)} vs {len(s)} vertices)"
        )
    return np.column_stack([m, s])


def _orient_ccw(verts, tris):
    p = verts[tris]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    neg = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tris = tris.copy()
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return tris


def _triangulate_checked(bounds, polys, size, periodic_axis):
    # input segments may not be split, so a coarse outer boundary next to a
    # refined interior can leave slivers; retry with a finer boundary
    err = None
    for factor in (1.0, 0.7, 0.5, 0.35):
        out = _triangulate(bounds, polys, size, periodic_axis, factor)
        try:
            _check_quality(out[0], out[1])
            return out
        except MeshError as exc:
            err = exc
    raise err


def _triangulate(bounds, polys, size, periodic_axis, boundary_factor=1.0):
    """Triangle-backed mesh of a rectangle minus polygons.

    ``periodic_axis`` 0 copies the left side onto the right side, 1 copies the
    bottom side onto the top side.  Outer sides are marched with spacing
    ``boundary_factor * size``.
    """
    x0, x1, y0, y1 = bounds
    inner = size

    def size(x):
        return boundary_factor * inner(x)

    if periodic_axis == 0:
        ys = _march(y0, y1, lambda t: float(min(size(np.array([[x0, t]]))[0],
                                                 size(np.array([[x1, t]]))[0])))
        xs_b = _march(x0, x1, lambda t: float(size(np.array([[t, y0]]))[0]))
        xs_t = _march(x0, x1, lambda t: float(size(np.array([[t, y1]]))[0]))
        ys_l = ys_r = ys
    else:
        xs = _march(x0, x1, lambda t: float(min(size(np.array([[t, y0]]))[0],
                                                 size(np.array([[t, y1]]))[0])))
        xs_b = xs_t = xs
        ys_l = _march(y0, y1, lambda t: float(size(np.array([[x0, t]]))[0]))
        ys_r = _march(y0, y1, lambda t: float(size(np.array([[x1, t]]))[0]))

    # counterclockwise outer loop: bottom, right, top, left
    loop = []
    tags = []
    loop += [(x, y0) for x in xs_b[:-1]]
    tags += ["bottom"] * (len(xs_b) - 1)
    loop += [(x1, y) for y in ys_r[:-1]]
    tags += ["right"] * (len(ys_r) - 1)
    loop += [(x, y1) for x in xs_t[::-1][:-1]]
    tags += ["top"] * (len(xs_t) - 1)
    loop += [(x0, y) for y in ys_l[::-1][:-1]]
    tags += ["left"] * (len(ys_l) - 1)
    verts = [np.array(loop)]
    n0 = len(loop)
    segs = [np.column_stack([np.arange(n0), (np.arange(n0) + 1) % n0])]
    seg_tags = list(tags)
    holes = []
    offset = n0
    for k, poly in enumerate(polys):
        n = len(poly)
        verts.append(poly)
        segs.append(offset + np.column_stack([np.arange(n), (np.arange(n) + 1) % n]))
        seg_tags += [f"hole({k})"] * n
        # a point strictly inside: nudge the first vertex inward along the angle bisector
        holes.append(_interior_point(poly))
        offset += n
    V = np.concatenate(verts)
    S = np.concatenate(segs)
    markers = np.arange(len(S)) + 1
    data = dict(vertices=V, segments=S, segment_markers=markers)
    if holes:
        data["holes"] = np.array(holes)
    scale = max(x1 - x0, y1 - y0)
    size = inner
    hmin = float(size(V).min())
    out = triangle.triangulate(data, f"p{_QUALITY_SWITCH}Ya{0.433 * max(hmin, 1e-300) ** 2 * 64:.17g}")
    for _ in range(_MAX_REFINE_ROUNDS):
        tri = out["triangles"]
        cen = out["vertices"][tri].mean(axis=1)
        target = 0.433 * size(cen) ** 2
        p = out["vertices"][tri]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        if np.all(area <= target * 1.0000001):
            break
        out["triangle_max_area"] = target
        out = triangle.triangulate(out, f"rp{_QUALITY_SWITCH}Ya")
    verts = out["vertices"]
    tris = _orient_ccw(verts, out["triangles"].astype(np.int64))
    # Triangle renumbers nothing on input vertices; input segments are intact (Y)
    edges, etags = _tag_edges(verts, tris, S, seg_tags, bounds)
    return verts, tris, edges, etags, scale


def _interior_point(poly: np.ndarray) -> np.ndarray:
    c = poly.mean(axis=0)
    from .geometry import point_in_polygon

    if point_in_polygon(c[None], poly)[0]:
        return c
    # fall back: midpoint of a short chord near the first vertex
    for i in range(1, len(poly) - 1):
        m = (poly[0] + poly[i + 1]) / 2
        if point_in_polygon(m[None], poly)[0]:
            return m
    raise GeometryError("could not find a point inside the hole polygon")


def _check_quality(verts, tris):
    ang = min_angles(verts, tris)
    worst = int(np.argmin(ang))
    if ang[worst] < MIN_ANGLE_FLOOR:
        raise MeshError(
            f"minimum angle {ang[worst]:.2f} deg below {MIN_ANGLE_FLOOR} deg "
            f"at triangle {worst} {verts[tris[worst]].tolist()}"
        )


def mesh_cell(spec: CellSpec, target_h: float, grading: float = 1.0,
              h_max: Optional[float] = None) -> PeriodicMesh:
    """Mesh the perforated periodicity cell with left/right periodic pairing.

    Near the holes the element size is ``target_h``; with ``grading > 1`` it
    grows linearly with the distance to the holes (rate ``grading - 1``) up
    to ``h_max``.
    """
    if target_h <= 0:
        raise MeshError("target_h must be positive")
    H = spec.H
    bounds = (-0.5, 0.5, 0.0, H)
    if not spec.perforated:
        nx, ny = _grid_counts(1.0, H, target_h)
        verts, tris = _structured_mesh(bounds, nx, ny)
        edges, tags = _tag_edges(verts, tris, np.empty((0, 2), int), [], bounds)
        pairs = _pair(verts, edges, tags, "left", "right", 1, max(1.0, H))
        return PeriodicMesh(verts, tris, edges, tags, pairs, "cell", bounds, 0,
                            {"target_h": target_h, "structured": True})
    eps = spec.epsilon
    if target_h >= min(eps * spec.hole.diameter / 4, H / 4):
        raise MeshError(
            f"target_h={target_h} must be below min(eps*diam/4, H/4)="
            f"{min(eps * spec.hole.diameter / 4, H / 4):.4g}"
        )
    if h_max is None:
        h_max = min(H / 8, 1 / 32) if grading > 1 else target_h
    h_max = max(h_max, target_h)
    tol = min(spec.hole.tolerance * eps, target_h / 4)
    polys = instantiate_cell(spec, tolerance=tol / eps, max_segment=target_h)
    size = _size_field(np.concatenate(polys), target_h, grading, h_max)
    verts, tris, edges, tags, scale = _triangulate_checked(bounds, polys, size, 0)
    pairs = _pair(verts, edges, tags, "left", "right", 1, scale)
    return PeriodicMesh(verts, tris, edges, tags, pairs, "cell", bounds, len(polys),
                        {"target_h": target_h, "grading": grading, "h_max": h_max,
                         "polygons": polys})


def mesh_strip(spec: StripSpec, target_h: float, grading: float = 1.0,
               h_max: Optional[float] = None) -> PeriodicMesh:
    """Mesh ``(-T, T) x (0, H)`` minus the hole with bottom/top pairing."""
    if target_h <= 0:
        raise MeshError("target_h must be positive")
    spec.validate()
    bounds = (-spec.T, spec.T, 0.0, spec.H)
    if spec.hole is None:
        nx, ny = _grid_counts(2 * spec.T, spec.H, target_h)
        verts, tris = _structured_mesh(bounds, nx, ny)
        edges, tags = _tag_edges(verts, tris, np.empty((0, 2), int), [], bounds)
        pairs = _pair(verts, edges, tags, "bottom", "top", 0, 2 * spec.T)
        return PeriodicMesh(verts, tris, edges, tags, pairs, "strip", bounds, 0,
                            {"target_h": target_h, "structured": True})
    if h_max is None:
        h_max = spec.H / 8 if grading > 1 else target_h
    h_max = max(h_max, target_h)
    tol = min(spec.hole.tolerance, target_h / 4)
    poly = spec.hole.polygon(tol, max_segment=target_h)
    size = _size_field(poly, target_h, grading, h_max)
    verts, tris, edges, tags, scale = _triangulate_checked(bounds, [poly], size, 1)
    pairs = _pair(verts, edges, tags, "bottom", "top", 0, scale)
    return PeriodicMesh(verts, tris, edges, tags, pairs, "strip", bounds, 1,
                        {"target_h": target_h, "grading": grading, "h_max": h_max,
                         "polygons": [poly]})


def _grid_counts(width, height, target_h):
    # legs of target_h / sqrt(2) keep the longest edge (the diagonal) at target_h
    leg = target_h / math.sqrt(2.0)
    return max(1, math.ceil(width / leg - 1e-9)), max(1, math.ceil(height / leg - 1e-9))


def _structured_mesh(bounds, nx, ny):
    x0, x1, y0, y1 = bounds
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    I, J = I.ravel(), J.ravel()
    a = I * (ny + 1) + J
    b = (I + 1) * (ny + 1) + J
    c = b + 1
    d = a + 1
    tris = np.empty((2 * len(a), 3), dtype=np.int64)
    tris[0::2] = np.column_stack([a, b, c])
    tris[1::2] = np.column_stack([a, c, d])
    return verts, tris


def refine_uniform(mesh: PeriodicMesh) -> PeriodicMesh:
    """Red refinement: every triangle split into four similar ones.

    New vertices are edge midpoints, so the refined P1 space contains the
    coarse one and periodic pairs stay exact.
    """
    V, T = mesh.vertices, mesh.triangles
    e = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    key = np.sort(e, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    mids = 0.5 * (V[uniq[:, 0]] + V[uniq[:, 1]])
    nV = len(V)
    m = nV + inv.reshape(3, -1).T  # midpoint ids of edges (01, 12, 20)
    a, b, c = T[:, 0], T[:, 1], T[:, 2]
    m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
    tris = np.concatenate([
        np.column_stack([a, m01, m20]),
        np.column_stack([m01, b, m12]),
        np.column_stack([m20, m12, c]),
        np.column_stack([m01, m12, m20]),
    ])
    verts = np.concatenate([V, mids])
    lookup = {tuple(k): nV + i for i, k in enumerate(uniq)}
    edges, tags = [], []
    for (i, j), tag in zip(mesh.edges, mesh.edge_tags):
        mid = lookup[(min(i, j), max(i, j))]
        edges += [(i, mid), (mid, j)]
        tags += [tag, tag]
    edges = np.array(edges, dtype=np.int64)
    tags = tuple(tags)
    x0, x1, y0, y1 = mesh.bounds
    scale = max(x1 - x0, y1 - y0)
    if mesh.kind == "cell":
        pairs = _pair(verts, edges, tags, "left", "right", 1, scale)
    else:
        pairs = _pair(verts, edges, tags, "bottom", "top", 0, scale)
    # underscore keys are caches tied to the old triangles
    meta = {k: v for k, v in mesh.meta.items() if not k.startswith("_")}
    meta["refined"] = meta.get("refined", 0) + 1
    return PeriodicMesh(verts, tris, edges, tags, pairs, mesh.kind, mesh.bounds,
                        mesh.n_holes, meta)


def dump_mesh(mesh: PeriodicMesh, path) -> None:
    """Plain-text dump: header, ``v x y``, ``t i j k``, ``e i j tag`` lines."""
    with open(path, "w") as fh:
        fh.write(f"# perfstrip mesh kind={mesh.kind} vertices={mesh.n_vertices} "
                 f"triangles={len(mesh.triangles)} edges={len(mesh.edges)}\n")
        for x, y in mesh.vertices:
            fh.write(f"v {x:.17g} {y:.17g}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"t {i} {j} {k}\n")
        for (i, j), tag in zip(mesh.edges, mesh.edge_tags):
            fh.write(f"e {i} {j} {tag}\n")
