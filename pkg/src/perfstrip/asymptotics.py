"""First-order eigenvalue corrections and predicted gap edges.

Everything here is an explicit formula in the boundary-layer constants
``m1``, ``M_Xi``, ``|omega|`` and ``H``.  The perturbed eigenvalue near a
limit value ``Lambda0`` is ``Lambda0 + eps * Lambda' + O(eps^2)``.

Near the two crossings that open gaps the Floquet parameter is zoomed,
``eta = eta_star + eps * psi``, and ``Lambda'`` solves a 2x2 symmetric
eigenproblem in the amplitudes of the two crossing waves.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .cell_constants import CellConstants

_PI = math.pi
NODES = {"circ": (0.0, 4 * _PI ** 2), "square": (_PI, _PI ** 2)}


class ValidityRangeWarning(UserWarning):
    pass


def correction_simple(cc: CellConstants, j: int, k: int, eta: float) -> float:
    """``Lambda'`` of the simple limit eigenvalue on branch ``(j, k)``."""
    a = cc.area_omega / (2 * cc.H)
    t1 = (_PI * k / cc.H) ** 2 * cc.M_Xi / (2 * cc.H)
    t2 = (eta + 2 * _PI * j) ** 2 * (cc.m1 - a)
    return -2.0 * (t1 + t2)


@dataclass(frozen=True)
class NodeCorrection:
    node_id: str
    psi: float
    lambda_prime_minus: float
    lambda_prime_plus: float
    eigvec_minus: tuple
    eigvec_plus: tuple


def node_matrix(cc: CellConstants, node_id: str, psi: float) -> np.ndarray:
    """The 2x2 matrix acting on the amplitudes ``(a_+, a_-)``.

    ``a_+`` multiplies the wave ``exp(+i s x_1)`` and ``a_-`` the wave
    ``exp(-i s x_1)``, with ``s = 2 pi`` (circ) or ``s = pi`` (square).
    """
    w = cc.area_omega / cc.H
    m1 = cc.m1
    if node_id == "circ":
        d, off, slope = 4 * _PI ** 2 * w - 8 * _PI ** 2 * m1, 4 * _PI ** 2 * w + 8 * _PI ** 2 * m1, 4 * _PI
    elif node_id == "square":
        d, off, slope = _PI ** 2 * w - 2 * _PI ** 2 * m1, _PI ** 2 * w + 2 * _PI ** 2 * m1, 2 * _PI
    else:
        raise ValueError(f"unknown node {node_id!r}")
    return np.array([[d + slope * psi, off], [off, d - slope * psi]])


def _check_range(cc: CellConstants, node_id: str) -> None:
    limit = 0.5 if node_id == "circ" else 1.0
    if not cc.H < limit:
        warnings.warn(f"node {node_id} formulas are justified only for H < {limit}; "
                      f"got H={cc.H}", ValidityRangeWarning, stacklevel=3)


def correction_node(cc: CellConstants, node_id: str, psi: float) -> NodeCorrection:
    """Split of the double limit eigenvalue at ``eta_star + eps * psi``.

    Eigenvalues use the closed form; eigenvectors come from the 2x2 matrix,
    normalized with a nonnegative first nonzero component.
    """
    _check_range(cc, node_id)
    a = cc.area_omega / (2 * cc.H)
    m1 = cc.m1
    if node_id == "circ":
        c = 2 * _PI * (a - m1)
        r = math.sqrt(4 * _PI ** 2 * (m1 + a) ** 2 + psi * psi)
        lm, lp = 4 * _PI * (c - r), 4 * _PI * (c + r)
    elif node_id == "square":
        c = _PI * (a - m1)
        r = math.sqrt(_PI ** 2 * (m1 + a) ** 2 + psi * psi)
        lm, lp = 2 * _PI * (c - r), 2 * _PI * (c + r)
    else:
        raise ValueError(f"unknown node {node_id!r}")
    _, V = np.linalg.eigh(node_matrix(cc, node_id, psi))
    vecs = []
    for v in V.T:
        i = 0 if abs(v[0]) > 1e-14 else 1
        v = v if v[i] >= 0 else -v
        vecs.append((float(v[0]), float(v[1])))
    return NodeCorrection(node_id, float(psi), lm, lp, vecs[0], vecs[1])


@dataclass(frozen=True)
class GapPrediction:
    """First-order prediction for gap ``p``; edges are ``const + slope * eps``."""

    p: int
    node_value: float
    lower_edge_slope: float
    upper_edge_slope: float
    width_slope: float
    epsilon: float

    @property
    def lower_edge_bound(self) -> float:
        return self.node_value + self.lower_edge_slope * self.epsilon

    @property
    def upper_edge_bound(self) -> float:
        return self.node_value + self.upper_edge_slope * self.epsilon

    @property
    def width(self) -> float:
        return self.width_slope * self.epsilon


def predicted_gaps(cc: CellConstants, epsilon: float) -> tuple:
    """``(predictions, omitted)``: gap predictions and ``{p: reason}`` for skipped ones."""
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    a = cc.area_omega / (2 * cc.H)
    s = cc.m1 + a
    w = cc.area_omega / cc.H
    preds, omitted = [], {}
    if cc.H < 1:
        preds.append(GapPrediction(1, _PI ** 2, -4 * _PI ** 2 * cc.m1, 2 * _PI ** 2 * w,
                                   4 * _PI ** 2 * s, epsilon))
    else:
        omitted[1] = "H >= 1"
    if cc.H < 0.5:
        preds.append(GapPrediction(2, 4 * _PI ** 2, -16 * _PI ** 2 * cc.m1, 8 * _PI ** 2 * w,
                                   16 * _PI ** 2 * s, epsilon))
    else:
        omitted[2] = "H >= 1/2"
    return preds, omitted


def node_branch_indices(node_id: str) -> tuple:
    """1-based sorted indices of the eigenvalues paired with ``(Lambda'_-, Lambda'_+)``."""
    return (2, 3) if node_id == "circ" else (1, 2)


def node_psi(node_id: str, eta: float, epsilon: float) -> float:
    """Fast variable of ``eta`` about the node (``eta`` near ``-pi`` maps to ``pi``)."""
    if node_id == "circ":
        return eta / epsilon
    d = eta - _PI if eta >= 0 else eta + _PI
    return d / epsilon
