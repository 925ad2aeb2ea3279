"""The metric space of Q-points: optimal-matching metric, mean, translation.

A Q-point is an unordered multiset of Q vectors in R^n. The distance
between two Q-points is the square root of the minimum-cost perfect
matching with squared-Euclidean edge costs. An exhaustive factorial
enumeration is kept alongside as an independent oracle.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


class DimensionMismatchError(ValueError):
    """Two Q-points with different Q or ambient dimension."""


class OracleCapacityError(ValueError):
    """Brute-force oracle asked to enumerate more than 8! matchings."""


_BRUTEFORCE_MAX_Q = 8


def _canonicalize(points: np.ndarray) -> np.ndarray:
    """Sort rows lexicographically so multiset equality is array equality."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    order = np.lexsort(pts.T[::-1])
    return np.ascontiguousarray(pts[order])


@dataclass(frozen=True)
class QPoint:
    """An element of A_Q(R^n): Q vectors with multiplicity, order-free.

    `points` is stored in canonical (lexicographic) row order, so two
    QPoints are equal iff their arrays compare equal elementwise.
    """

    points: np.ndarray = field(compare=False)

    def __post_init__(self):
        pts = _canonicalize(self.points)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("QPoint needs a (Q, n) array of vectors")
        if not np.all(np.isfinite(pts)):
            raise ValueError("QPoint components must be finite")
        object.__setattr__(self, "points", pts)
        self.points.setflags(write=False)

    @property
    def q(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, QPoint):
            return NotImplemented
        return self.points.shape == other.points.shape and np.array_equal(
            self.points, other.points
        )

    def __hash__(self) -> int:
        return hash((self.points.shape, self.points.tobytes()))

    def to_json(self) -> str:
        """JSON array of Q arrays of n numbers, canonical order."""
        return json.dumps(self.points.tolist())

    @classmethod
    def from_json(cls, text: str) -> "QPoint":
        return cls(np.asarray(json.loads(text), dtype=float))


def _check_pair(a: QPoint, b: QPoint) -> None:
    if a.q != b.q or a.n != b.n:
        raise DimensionMismatchError(
            f"Q-points of shape {a.points.shape} and {b.points.shape} are incompatible"
        )


def metric_G(a: QPoint, b: QPoint) -> float:
    """Optimal-matching distance between two Q-points.

    Exact Kuhn-Munkres assignment on the Q x Q table of squared
    Euclidean distances; returns the square root of the minimal cost.
    """
    _check_pair(a, b)
    diff = a.points[:, None, :] - b.points[None, :, :]
    cost = np.einsum("ijk,ijk->ij", diff, diff)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(max(cost[rows, cols].sum(), 0.0)))


def metric_G_bruteforce(a: QPoint, b: QPoint) -> float:
    """Exhaustive minimum over all Q! matchings. Test oracle, Q <= 8."""
    _check_pair(a, b)
    if a.q > _BRUTEFORCE_MAX_Q:
        raise OracleCapacityError(f"brute force capped at Q={_BRUTEFORCE_MAX_Q}, got {a.q}")
    diff = a.points[:, None, :] - b.points[None, :, :]
    cost = np.einsum("ijk,ijk->ij", diff, diff)
    idx = np.arange(a.q)
    best = min(cost[idx, perm].sum() for perm in itertools.permutations(idx))
    return float(np.sqrt(max(best, 0.0)))


def eta_mean(a: QPoint) -> np.ndarray:
    """Arithmetic mean of the Q component vectors."""
    return a.points.mean(axis=0)


def tau_translate(a: QPoint, P) -> QPoint:
    """Translate every component by -P. Isometry of the matching metric."""
    P = np.asarray(P, dtype=float)
    if P.shape != (a.n,):
        raise DimensionMismatchError(f"translation vector of shape {P.shape}, expected ({a.n},)")
    return QPoint(a.points - P[None, :])
