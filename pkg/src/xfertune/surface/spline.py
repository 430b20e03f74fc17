"""Relaxed (natural) cubic spline built from the full piecewise linear system."""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

from ..errors import DomainError


@lru_cache(maxsize=512)
def _operator(knots: tuple[float, ...]) -> np.ndarray:
    """Matrix mapping ordinates to stacked local piece coefficients.

    Piece i is g_i(x) = a + b*t + c*t^2 + d*t^3 with t = x - x_i. The
    4(N-1) unknowns are pinned by interpolation at both ends of every piece,
    matching first and second derivatives at interior knots, and zero
    curvature at the two end knots. The system only depends on the knots,
    so its inverse is cached and reused for every set of ordinates.
    """
    x = np.asarray(knots)
    n = len(x)
    k = n - 1
    h = np.diff(x)
    a = np.zeros((4 * k, 4 * k))
    rhs = np.zeros((4 * k, n))
    row = 0
    for i in range(k):
        c = 4 * i
        a[row, c] = 1.0
        rhs[row, i] = 1.0
        row += 1
        a[row, c:c + 4] = (1.0, h[i], h[i] ** 2, h[i] ** 3)
        rhs[row, i + 1] = 1.0
        row += 1
    for i in range(1, k):
        prev, cur = 4 * (i - 1), 4 * i
        hp = h[i - 1]
        # first derivative match
        a[row, prev:prev + 4] = (0.0, 1.0, 2 * hp, 3 * hp ** 2)
        a[row, cur + 1] = -1.0
        row += 1
        # second derivative match
        a[row, prev:prev + 4] = (0.0, 0.0, 2.0, 6 * hp)
        a[row, cur + 2] = -2.0
        row += 1
    a[row, 2] = 2.0
    row += 1
    last = 4 * (k - 1)
    a[row, last + 2] = 2.0
    a[row, last + 3] = 6 * h[-1]
    op = np.linalg.solve(a, rhs)
    op.setflags(write=False)
    return op


class Spline1D:
    """Natural cubic spline through (x_i, y_i)."""

    __slots__ = ("x", "y", "coef")

    def __init__(self, x: np.ndarray, y: np.ndarray, coef: np.ndarray):
        self.x = x
        self.y = y
        self.coef = coef

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.x[0]), float(self.x[-1])

    def _piece(self, xq: float) -> int:
        lo, hi = self.x[0], self.x[-1]
        if not lo <= xq <= hi:
            raise DomainError(f"x={xq} outside spline domain [{lo}, {hi}]")
        i = int(np.searchsorted(self.x, xq, side="right")) - 1
        return min(max(i, 0), len(self.x) - 2)

    def __call__(self, xq: float, deriv: int = 0) -> float:
        i = self._piece(xq)
        a, b, c, d = self.coef[i]
        t = xq - self.x[i]
        if deriv == 0:
            if t == 0.0:
                return float(self.y[i])
            if xq == self.x[i + 1]:
                return float(self.y[i + 1])
            return float(a + t * (b + t * (c + t * d)))
        if deriv == 1:
            return float(b + t * (2 * c + 3 * d * t))
        if deriv == 2:
            return float(2 * c + 6 * d * t)
        if deriv == 3:
            return float(6 * d)
        return 0.0

    def derivative_at_knots(self, deriv: int = 1) -> np.ndarray:
        """Derivative values at every knot (left end of each piece, last knot from the last piece)."""
        out = np.empty(len(self.x))
        b, c, d = self.coef[:, 1], self.coef[:, 2], self.coef[:, 3]
        h = self.x[-1] - self.x[-2]
        if deriv == 1:
            out[:-1] = b
            out[-1] = b[-1] + h * (2 * c[-1] + 3 * d[-1] * h)
        elif deriv == 2:
            out[:-1] = 2 * c
            out[-1] = 2 * c[-1] + 6 * d[-1] * h
        else:
            raise ValueError("deriv must be 1 or 2")
        return out


def _knots(points_x: Sequence[float]) -> np.ndarray:
    x = np.asarray(points_x, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise ValueError("a spline needs at least 2 knots")
    if np.any(np.diff(x) <= 0):
        raise ValueError("spline abscissae must be strictly increasing (no duplicates)")
    return x


def fit_spline1d(points: Sequence[tuple[float, float]], boundary: str = "relaxed") -> Spline1D:
    if boundary != "relaxed":
        raise ValueError(f"unsupported boundary {boundary!r}")
    pts = list(points)
    if len(pts) < 2:
        raise ValueError("a spline needs at least 2 knots")
    xs, ys = zip(*pts)
    return spline_from_arrays(xs, ys)


def spline_from_arrays(xs, ys) -> Spline1D:
    x = _knots(xs)
    y = np.asarray(ys, dtype=float)
    if y.shape != x.shape:
        raise ValueError("x and y lengths differ")
    coef = (_operator(tuple(x.tolist())) @ y).reshape(-1, 4)
    return Spline1D(x, y, coef)


def eval_spline1d(s: Spline1D, x: float) -> float:
    return s(x)


def knot_derivatives(xs, ys, deriv: int = 1) -> np.ndarray:
    """Derivatives at the knots of the natural spline through (xs, ys).

    ``ys`` may be 2-D; each column is treated as a separate spline.
    """
    x = _knots(xs)
    y = np.asarray(ys, dtype=float)
    op = _operator(tuple(x.tolist()))
    coef = (op @ y.reshape(len(x), -1)).reshape(len(x) - 1, 4, -1)
    h = x[-1] - x[-2]
    b, c, d = coef[:, 1], coef[:, 2], coef[:, 3]
    if deriv == 1:
        last = b[-1] + h * (2 * c[-1] + 3 * d[-1] * h)
        out = np.vstack([b, last[None, :]])
    elif deriv == 2:
        last = 2 * c[-1] + 6 * d[-1] * h
        out = np.vstack([2 * c, last[None, :]])
    else:
        raise ValueError("deriv must be 1 or 2")
    return out.reshape(y.shape)
