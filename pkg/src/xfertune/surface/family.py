"""Throughput over (p, cc, pp): bicubic slices per observed pp, splines across pp."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from ..errors import DomainError
from ..translog import ParameterPoint
from .bicubic import BicubicSurface
from .confidence import PointStats
from .spline import _operator


def _as_pcp(theta) -> tuple[float, float, float]:
    """(p, cc, pp) from a ParameterPoint or a (cc, p, pp) triple."""
    if isinstance(theta, ParameterPoint):
        return float(theta.p), float(theta.cc), float(theta.pp)
    cc, p, pp = theta
    return float(p), float(cc), float(pp)


def fill_missing(p_axis, cc_axis, cells: Mapping[tuple[float, float], float]) -> tuple[np.ndarray, np.ndarray]:
    """Grid values with unobserved cells set to the mean of their nearest observed cells."""
    n, m = len(p_axis), len(cc_axis)
    values = np.empty((n, m))
    synthetic = np.zeros((n, m), dtype=bool)
    known = np.array(list(cells.keys()), dtype=float)
    known_vals = np.array(list(cells.values()), dtype=float)
    for i, p in enumerate(p_axis):
        for j, cc in enumerate(cc_axis):
            key = (float(p), float(cc))
            if key in cells:
                values[i, j] = cells[key]
                continue
            d2 = (known[:, 0] - p) ** 2 + (known[:, 1] - cc) ** 2
            nearest = d2 == d2.min()
            values[i, j] = float(known_vals[nearest].mean())
            synthetic[i, j] = True
    return values, synthetic


class SurfaceFamily:
    """One bicubic slice per observed pp, all on the same (p, cc) grid."""

    def __init__(self, slices: Mapping[int, BicubicSurface], synthetic: Mapping[int, np.ndarray] | None = None):
        if not slices:
            raise ValueError("surface family needs at least one pp slice")
        self.pp_values = np.array(sorted(slices), dtype=float)
        self.slices = {int(k): slices[k] for k in sorted(slices)}
        first = next(iter(self.slices.values()))
        for s in self.slices.values():
            if not (np.array_equal(s.p_axis, first.p_axis) and np.array_equal(s.cc_axis, first.cc_axis)):
                raise ValueError("all pp slices must share the same (p, cc) grid")
        self.p_axis = first.p_axis
        self.cc_axis = first.cc_axis
        self.synthetic = {int(k): np.asarray(v, dtype=bool) for k, v in (synthetic or {}).items()}

    def contains(self, theta) -> bool:
        p, cc, pp = _as_pcp(theta)
        return (
            self.p_axis[0] <= p <= self.p_axis[-1]
            and self.cc_axis[0] <= cc <= self.cc_axis[-1]
            and self.pp_values[0] <= pp <= self.pp_values[-1]
        )

    def is_synthetic(self, theta: ParameterPoint) -> bool:
        mask = self.synthetic.get(theta.pp)
        if mask is None:
            return theta.pp not in self.slices
        i = np.flatnonzero(self.p_axis == theta.p)
        j = np.flatnonzero(self.cc_axis == theta.cc)
        if not (len(i) and len(j)):
            return True
        return bool(mask[i[0], j[0]])

    def _check(self, p, cc, pp):
        if not self.contains((cc, p, pp)):
            raise DomainError(f"(cc={cc}, p={p}, pp={pp}) outside the fitted hull")

    def _pp_pieces(self, cols: np.ndarray, pp: float) -> tuple[np.ndarray, float]:
        knots = self.pp_values
        coef = (_operator(tuple(knots.tolist())) @ cols).reshape(len(knots) - 1, 4, -1)
        i = int(np.searchsorted(knots, pp, side="right")) - 1
        i = min(max(i, 0), len(knots) - 2)
        return coef[i], pp - knots[i]

    def __call__(self, theta) -> float:
        p, cc, pp = _as_pcp(theta)
        self._check(p, cc, pp)
        if pp in self.slices:
            return self.slices[int(pp)](p, cc)
        cols = np.array([[s(p, cc)] for s in self.slices.values()])
        (a, b, c, d), t = self._pp_pieces(cols, pp)
        return float((a + t * (b + t * (c + t * d)))[0])

    predict = __call__

    def derivatives(self, theta) -> tuple[float, np.ndarray, np.ndarray]:
        """Value, gradient and Hessian, ordered (p, cc, pp)."""
        p, cc, pp = _as_pcp(theta)
        self._check(p, cc, pp)
        cols = np.array([
            [s(p, cc), s(p, cc, 1, 0), s(p, cc, 0, 1), s(p, cc, 2, 0), s(p, cc, 0, 2), s(p, cc, 1, 1)]
            for s in self.slices.values()
        ])
        if len(self.slices) == 1:
            f, fp, fc, fpp, fcc, fpc = cols[0]
            ft = ftt = fpt = fct = 0.0
        else:
            (a, b, c, d), t = self._pp_pieces(cols, pp)
            val = a + t * (b + t * (c + t * d))
            d1 = b + t * (2 * c + 3 * d * t)
            d2 = 2 * c + 6 * d * t
            if pp in self.slices:
                val = cols[list(self.slices).index(int(pp))]
            f, fp, fc, fpp, fcc, fpc = val
            ft, fpt, fct = d1[0], d1[1], d1[2]
            ftt = d2[0]
        grad = np.array([fp, fc, ft])
        hess = np.array([[fpp, fpc, fpt], [fpc, fcc, fct], [fpt, fct, ftt]])
        return float(f), grad, hess


def fit_family(stats: Mapping[ParameterPoint, PointStats]) -> SurfaceFamily:
    """Fit a family from per-lattice means; missing grid cells are filled from nearest neighbours."""
    if not stats:
        raise ValueError("no observations to fit")
    p_axis = sorted({t.p for t in stats})
    cc_axis = sorted({t.cc for t in stats})
    pp_axis = sorted({t.pp for t in stats})
    if len(p_axis) < 2 or len(cc_axis) < 2:
        raise ValueError(f"degenerate grid {len(p_axis)}x{len(cc_axis)}: need at least 2x2")
    slices, synthetic = {}, {}
    for pp in pp_axis:
        cells = {(float(t.p), float(t.cc)): st.mean for t, st in stats.items() if t.pp == pp}
        values, mask = fill_missing(p_axis, cc_axis, cells)
        slices[pp] = BicubicSurface(p_axis, cc_axis, values)
        synthetic[pp] = mask
    return SurfaceFamily(slices, synthetic)


def eval_surface(fam: SurfaceFamily, theta) -> float:
    return fam(theta)


def family_from_grids(p_axis: Sequence[float], cc_axis: Sequence[float], grids: Mapping[int, np.ndarray]) -> SurfaceFamily:
    """Family straight from full grids (no missing cells)."""
    return SurfaceFamily({pp: BicubicSurface(p_axis, cc_axis, g) for pp, g in grids.items()})
