"""Dispersion curves of the unperforated strip, their crossings, and count boxes.

Branch ``(j, k)`` is ``Lambda(eta) = (eta + 2 pi j)^2 + pi^2 k^2 / H^2`` on
``[-pi, pi]``.  Crossings ("nodes") are classified by a fixed table:

===================  =======================================================
status               rule
===================  =======================================================
exceptional_H        the crossing is degenerate: a third branch passes
                     through it or touches it at an end of its range
same_slope_no_gap    the two branches have slopes of equal sign
symmetry_protected   the transversal indices ``k`` differ
shaded               equal ``k``, opposite slopes, and the node value lies
                     strictly inside the range of some other branch
opens_gap            equal ``k``, opposite slopes, not shaded
===================  =======================================================

Only the crossings at ``(pi, pi^2)`` for ``H < 1`` and at ``(0, 4 pi^2)``
for ``H < 1/2`` carry a proof that a gap opens (``Node.proven``); every
other status is advisory.  Crossings at ``eta = -pi`` are the same points
as at ``eta = pi`` and are reported once, at ``eta = pi``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

EXCEPTIONAL_H = (0.5, 1 / math.sqrt(3), 1 / math.sqrt(8), 1 / math.sqrt(5), 1.0)
EXCEPTIONAL_TOL = 1e-6
STATUSES = ("opens_gap", "shaded", "symmetry_protected", "same_slope_no_gap",
            "exceptional_H")
_PI = math.pi


class ExceptionalHWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LimitEigen:
    j: int
    k: int
    eta: float
    value: float


def branch_value(H: float, j: int, k: int, eta: float) -> float:
    return (eta + 2 * _PI * j) ** 2 + (_PI * k / H) ** 2


def branch_range(H: float, j: int, k: int) -> tuple:
    """``(min, max)`` of branch ``(j, k)`` over ``eta`` in ``[-pi, pi]``."""
    c = (_PI * k / H) ** 2
    lo_abs = 0.0 if j == 0 else (2 * abs(j) - 1) * _PI
    hi_abs = (2 * abs(j) + 1) * _PI
    return lo_abs ** 2 + c, hi_abs ** 2 + c


def limit_eigenvalues(H: float, eta: float, count: int) -> list:
    """The ``count`` smallest limit eigenvalues at ``eta``, with labels.

    Ties are ordered by ``(k, |j|, j)``.
    """
    if H <= 0:
        raise ValueError("H must be positive")
    if count < 1:
        raise ValueError("count must be at least 1")
    J, kmax = 1, 1
    while True:
        cand = [LimitEigen(j, k, eta, branch_value(H, j, k, eta))
                for j in range(-J, J + 1) for k in range(kmax + 1)]
        cand.sort(key=lambda e: (e.value, e.k, abs(e.j), e.j))
        if len(cand) >= count:
            v = cand[count - 1].value
            j_ok = (2 * _PI * (J + 1) - _PI) ** 2 > v
            k_ok = (_PI * (kmax + 1) / H) ** 2 > v
            if j_ok and k_ok:
                break
            if not j_ok:
                J += 1
            if not k_ok:
                kmax += 1
        else:
            J += 1
            kmax += 1
    out = cand[:count]
    # every branch outside the window exceeds the count-th value
    assert (2 * _PI * (J + 1) - _PI) ** 2 > out[-1].value
    return out


@dataclass(frozen=True)
class Node:
    eta_star: float
    lambda_star: float
    branches: tuple
    status: str
    rule: str = ""
    proven: bool = False

    def label(self) -> str:
        (j1, k1), (j2, k2) = self.branches
        return f"({self.eta_star:+.6f}, {self.lambda_star:.6f}) ({j1},{k1})/({j2},{k2})"


def is_exceptional_H(H: float) -> Optional[float]:
    """The exceptional height within tolerance of ``H``, else ``None``."""
    for h in EXCEPTIONAL_H:
        if abs(H - h) <= EXCEPTIONAL_TOL:
            return h
    return None


def _branches_below(H: float, lam_max: float) -> list:
    out = []
    kmax = int(math.floor(H * math.sqrt(max(lam_max, 0.0)) / _PI)) + 1
    jmax = int(math.ceil((math.sqrt(max(lam_max, 0.0)) + _PI) / (2 * _PI))) + 1
    for j in range(-jmax, jmax + 1):
        for k in range(kmax + 1):
            if branch_range(H, j, k)[0] <= lam_max:
                out.append((j, k))
    return out


def _crossings(H: float, lam_max: float) -> list:
    br = _branches_below(H, lam_max)
    found = {}
    for a in range(len(br)):
        for b in range(a + 1, len(br)):
            (j1, k1), (j2, k2) = br[a], br[b]
            if j1 == j2:
                continue  # parallel curves never meet
            c1, c2 = (_PI * k1 / H) ** 2, (_PI * k2 / H) ** 2
            p, q = 2 * _PI * j1, 2 * _PI * j2
            eta = ((c2 - c1) / (p - q) - p - q) / 2
            if not -_PI - 1e-12 <= eta <= _PI + 1e-12:
                continue
            if abs(eta + _PI) <= 1e-12:
                # same point as eta = pi after relabelling j -> j - 1
                eta, j1, j2 = _PI, j1 - 1, j2 - 1
            elif abs(eta - _PI) <= 1e-12:
                eta = _PI
            lam = branch_value(H, j1, k1, eta)
            if lam > lam_max * (1 + 1e-12):
                continue
            pair = tuple(sorted([(j1, k1), (j2, k2)], key=lambda t: (t[1], t[0])))
            key = (round(eta, 9), pair)
            found[key] = (eta, lam, pair)
    return sorted(found.values(), key=lambda t: (t[1], t[0], t[2]))


def _extremum_locations(j: int) -> tuple:
    """Where branch ``j`` attains its min and max on ``[-pi, pi]``."""
    if j == 0:
        return (0.0,), (-_PI, _PI)
    return ((-_PI,), (_PI,)) if j > 0 else ((_PI,), (-_PI,))


def _degenerate(H: float, eta: float, lam: float, pair: tuple) -> bool:
    tol = 1e-9 * max(lam, 1.0)
    jmax = int(math.sqrt(lam) / (2 * _PI)) + 2
    kmax = int(H * math.sqrt(lam) / _PI) + 2
    for j in range(-jmax, jmax + 1):
        for k in range(kmax + 1):
            if (j, k) in pair:
                continue
            if abs(branch_value(H, j, k, eta) - lam) <= tol:
                return True
            lo, hi = branch_range(H, j, k)
            for locs, val in zip(_extremum_locations(j), (lo, hi)):
                if abs(val - lam) > tol:
                    continue
                for loc in locs:
                    # (-pi, lam) is the node itself when the branch continues a member
                    if eta == _PI and loc == -_PI and (j - 1, k) in pair:
                        continue
                    return True
    return False


def _shaded(H: float, lam: float, pair: tuple, eta: float) -> Optional[tuple]:
    jmax = int(math.sqrt(lam) / (2 * _PI)) + 2
    kmax = int(H * math.sqrt(lam) / _PI) + 1
    for k in range(kmax + 1):
        for j in range(-jmax, jmax + 1):
            if (j, k) in pair:
                continue
            lo, hi = branch_range(H, j, k)
            if lo < lam < hi:
                return (j, k)
    return None


def classify(H: float, eta: float, lam: float, pair: tuple,
             degenerate: bool) -> tuple:
    (j1, k1), (j2, k2) = pair
    s1, s2 = eta + 2 * _PI * j1, eta + 2 * _PI * j2
    if degenerate:
        return "exceptional_H", "a third branch passes through or ends at the node"
    if s1 * s2 > 0:
        return "same_slope_no_gap", "slopes of equal sign"
    if k1 != k2:
        return "symmetry_protected", f"transversal indices differ (k={k1}, k={k2})"
    other = _shaded(H, lam, pair, eta)
    if other is not None:
        return "shaded", f"inside the range of branch {other}"
    return "opens_gap", "equal k, opposite slopes, unshaded"


def find_nodes(H: float, lambda_max: float) -> list:
    """All crossings of distinct branches with value ``<= lambda_max``.

    Near an exceptional height the classification is evaluated at that
    height, degenerate nodes get ``exceptional_H``, and an
    ``ExceptionalHWarning`` is issued.
    """
    if H <= 0:
        raise ValueError("H must be positive")
    snap = is_exceptional_H(H)
    Hc = snap if snap is not None else H
    nodes = []
    for eta, lam, pair in _crossings(H, lambda_max):
        deg = _degenerate(Hc, eta, branch_value(Hc, *pair[0], eta), pair)
        status, rule = classify(Hc, eta, branch_value(Hc, *pair[0], eta), pair, deg)
        proven = (_is_square(eta, lam, pair) and H < 1) or (_is_circ(eta, lam, pair) and H < 0.5)
        proven = proven and status == "opens_gap"
        nodes.append(Node(eta, lam, pair, status, rule, proven))
    bad = [n for n in nodes if n.status == "exceptional_H"]
    if snap is not None or bad:
        warnings.warn(
            f"H={H} is exceptional: {len(bad)} node(s) with degenerate crossings; "
            "their classification is not available", ExceptionalHWarning, stacklevel=2)
    return nodes


def _is_square(eta, lam, pair):
    return abs(eta - _PI) < 1e-12 and set(pair) == {(0, 0), (-1, 0)}


def _is_circ(eta, lam, pair):
    return abs(eta) < 1e-12 and set(pair) == {(1, 0), (-1, 0)}


def find_node(nodes: list, which: str) -> Optional[Node]:
    """Pick the ``'square'`` ``(pi, pi^2)`` or ``'circ'`` ``(0, 4 pi^2)`` node."""
    test = _is_square if which == "square" else _is_circ
    for n in nodes:
        if test(n.eta_star, n.lambda_star, n.branches):
            return n
    return None


def count_box_constants(H: float, delta1: float, delta3: float) -> dict:
    """Margins ``K1..K4`` above ``pi^2`` and ``4 pi^2`` bounding eigenvalue counts.

    Entries outside their height range are ``None``, with the reason under
    ``"absent"``.
    """
    if not (0 < delta1 < _PI and 0 < delta3 < _PI):
        raise ValueError("delta1 and delta3 must lie in (0, pi)")
    if H <= 0:
        raise ValueError("H must be positive")
    out = {"K1": None, "K2": None, "K3": None, "K4": None, "absent": {}}
    p2 = _PI ** 2
    if H < 1:
        out["K1"] = min(2 * _PI * delta1, p2 * (1 - H * H) / (2 * H * H))
        out["K2"] = min(2 * p2, 2 * p2 * (1 - H * H) / (3 * H * H))
    else:
        out["absent"]["K1"] = out["absent"]["K2"] = "requires H < 1"
    if H < 0.5:
        out["K3"] = min(4 * _PI * delta3, p2 * (1 - 4 * H * H) / (H * H))
        out["K4"] = min(4 * p2, p2 * (1 - 4 * H * H) / (2 * H * H))
    else:
        out["absent"]["K3"] = out["absent"]["K4"] = "requires H < 1/2"
    return out
