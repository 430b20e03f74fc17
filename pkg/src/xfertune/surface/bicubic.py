"""Piecewise bicubic surface over a rectangular (p, cc) grid."""

from __future__ import annotations

import numpy as np

from ..errors import DomainError
from .spline import knot_derivatives


def _condition_matrix() -> np.ndarray:
    """Rows: f, f_u, f_v, f_uv at corners (0,0),(1,0),(0,1),(1,1); cols: a[k,l] flattened k*4+l."""
    corners = ((0, 0), (1, 0), (0, 1), (1, 1))
    rows = []
    for du, dv in ((0, 0), (1, 0), (0, 1), (1, 1)):
        for u, v in corners:
            row = np.zeros(16)
            for k in range(4):
                for l in range(4):
                    if k < du or l < dv:
                        continue
                    cu = 1.0 if du == 0 else float(k)
                    cv = 1.0 if dv == 0 else float(l)
                    pu = u ** (k - du) if k - du > 0 else 1.0
                    pv = v ** (l - dv) if l - dv > 0 else 1.0
                    row[k * 4 + l] = cu * cv * pu * pv
            rows.append(row)
    return np.array(rows)


_SOLVE = np.linalg.inv(_condition_matrix())


def _poly_terms(t: float, deriv: int) -> np.ndarray:
    if deriv == 0:
        return np.array([1.0, t, t * t, t ** 3])
    if deriv == 1:
        return np.array([0.0, 1.0, 2 * t, 3 * t * t])
    if deriv == 2:
        return np.array([0.0, 0.0, 2.0, 6 * t])
    if deriv == 3:
        return np.array([0.0, 0.0, 0.0, 6.0])
    return np.zeros(4)


class BicubicSurface:
    """C1 bicubic interpolant with node derivatives taken from natural splines.

    ``values[i, j]`` is the throughput at (p_axis[i], cc_axis[j]).
    """

    def __init__(self, p_axis, cc_axis, values, d1=None, d2=None, d12=None):
        self.p_axis = np.asarray(p_axis, dtype=float)
        self.cc_axis = np.asarray(cc_axis, dtype=float)
        self.values = np.asarray(values, dtype=float)
        n, m = len(self.p_axis), len(self.cc_axis)
        if n < 2 or m < 2:
            raise ValueError(f"degenerate grid {n}x{m}: need at least 2x2")
        if self.values.shape != (n, m):
            raise ValueError(f"values shape {self.values.shape} does not match grid {n}x{m}")
        if d1 is None:
            d1 = knot_derivatives(self.p_axis, self.values, 1)
        if d2 is None:
            d2 = knot_derivatives(self.cc_axis, self.values.T, 1).T
        if d12 is None:
            d12 = knot_derivatives(self.cc_axis, np.asarray(d1).T, 1).T
        self.d1 = np.asarray(d1, dtype=float)
        self.d2 = np.asarray(d2, dtype=float)
        self.d12 = np.asarray(d12, dtype=float)
        self.coeffs = self._solve_patches()

    def _solve_patches(self) -> np.ndarray:
        n, m = self.values.shape
        hp = np.diff(self.p_axis)
        hc = np.diff(self.cc_axis)
        out = np.empty((n - 1, m - 1, 4, 4))
        f, d1, d2, d12 = self.values, self.d1, self.d2, self.d12
        for i in range(n - 1):
            for j in range(m - 1):
                idx = ((i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1))
                cond = np.empty(16)
                for c, (a, b) in enumerate(idx):
                    cond[c] = f[a, b]
                    cond[4 + c] = d1[a, b] * hp[i]
                    cond[8 + c] = d2[a, b] * hc[j]
                    cond[12 + c] = d12[a, b] * hp[i] * hc[j]
                out[i, j] = (_SOLVE @ cond).reshape(4, 4)
        return out

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def contains(self, p: float, cc: float) -> bool:
        return (self.p_axis[0] <= p <= self.p_axis[-1]) and (self.cc_axis[0] <= cc <= self.cc_axis[-1])

    def _locate(self, p: float, cc: float) -> tuple[int, int]:
        if not self.contains(p, cc):
            raise DomainError(
                f"(p={p}, cc={cc}) outside grid [{self.p_axis[0]}, {self.p_axis[-1]}] x "
                f"[{self.cc_axis[0]}, {self.cc_axis[-1]}]"
            )
        i = int(np.searchsorted(self.p_axis, p, side="right")) - 1
        j = int(np.searchsorted(self.cc_axis, cc, side="right")) - 1
        return min(max(i, 0), len(self.p_axis) - 2), min(max(j, 0), len(self.cc_axis) - 2)

    def node_index(self, p: float, cc: float) -> tuple[int, int] | None:
        i = np.flatnonzero(self.p_axis == p)
        j = np.flatnonzero(self.cc_axis == cc)
        if len(i) and len(j):
            return int(i[0]), int(j[0])
        return None

    def __call__(self, p: float, cc: float, dp: int = 0, dc: int = 0) -> float:
        """Value or partial derivative of order (dp, dc) at (p, cc)."""
        if dc == 0 and dp <= 1 or dp == 0 and dc == 1 or dp == dc == 1:
            node = self.node_index(p, cc)
            if node is not None and self.contains(p, cc):
                src = {(0, 0): self.values, (1, 0): self.d1, (0, 1): self.d2, (1, 1): self.d12}[(dp, dc)]
                return float(src[node])
        i, j = self._locate(p, cc)
        hp = self.p_axis[i + 1] - self.p_axis[i]
        hc = self.cc_axis[j + 1] - self.cc_axis[j]
        u = (p - self.p_axis[i]) / hp
        v = (cc - self.cc_axis[j]) / hc
        val = _poly_terms(u, dp) @ self.coeffs[i, j] @ _poly_terms(v, dc)
        return float(val / (hp ** dp * hc ** dc))

    def gradient(self, p: float, cc: float) -> tuple[float, float]:
        return self(p, cc, 1, 0), self(p, cc, 0, 1)

    def hessian(self, p: float, cc: float) -> np.ndarray:
        fpp = self(p, cc, 2, 0)
        fcc = self(p, cc, 0, 2)
        fpc = self(p, cc, 1, 1)
        return np.array([[fpp, fpc], [fpc, fcc]])


def fit_bicubic(p_axis, cc_axis, values) -> BicubicSurface:
    return BicubicSurface(p_axis, cc_axis, values)
