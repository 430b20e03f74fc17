"""Least-squares polynomial surfaces over (p, cc, pp), used as comparison baselines."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .family import _as_pcp


def _exponents(degree: int) -> list[tuple[int, int, int]]:
    return [
        e for e in itertools.product(range(degree + 1), repeat=3) if sum(e) <= degree
    ]


@dataclass
class PolynomialModel:
    degree: int
    exponents: list
    coef: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    rmse: float
    regularized: bool = False

    def _design(self, x: np.ndarray) -> np.ndarray:
        z = (x - self.center) / self.scale
        return np.stack([np.prod(z ** np.array(e), axis=1) for e in self.exponents], axis=1)

    def predict(self, theta) -> float:
        x = np.array([_as_pcp(theta)])
        return float((self._design(x) @ self.coef)[0])

    __call__ = predict


def fit_regression(samples: Iterable[tuple[object, float]], degree: int) -> PolynomialModel:
    """Full multivariate polynomial of total degree ``degree`` in (p, cc, pp)."""
    if degree not in (2, 3):
        raise ValueError("degree must be 2 or 3")
    pts = list(samples)
    exps = _exponents(degree)
    if len(pts) < len(exps):
        raise ValueError(f"need at least {len(exps)} samples for degree {degree}, got {len(pts)}")
    x = np.array([_as_pcp(t) for t, _ in pts])
    y = np.array([float(v) for _, v in pts])
    center = x.mean(axis=0)
    scale = np.where(np.ptp(x, axis=0) > 0, np.ptp(x, axis=0) / 2, 1.0)
    model = PolynomialModel(degree, exps, np.zeros(len(exps)), center, scale, 0.0)
    a = model._design(x)
    rank = np.linalg.matrix_rank(a)
    if rank < a.shape[1]:
        warnings.warn("rank-deficient design matrix; using a ridge-regularized solve", RuntimeWarning, stacklevel=2)
        lam = 1e-8 * max(1.0, float(np.trace(a.T @ a)) / a.shape[1])
        coef = np.linalg.solve(a.T @ a + lam * np.eye(a.shape[1]), a.T @ y)
        model.regularized = True
    else:
        coef = np.linalg.lstsq(a, y, rcond=None)[0]
    model.coef = coef
    model.rmse = float(math.sqrt(np.mean((a @ coef - y) ** 2)))
    return model


def surface_accuracy(model: Callable, holdout: Sequence[tuple[object, float]], return_counts: bool = False):
    """100 * (1 - mean relative absolute error), floored at 0.

    Holdout samples with zero true throughput are skipped; with
    ``return_counts`` the result is (accuracy, used, skipped).
    """
    if not holdout:
        raise ValueError("holdout must be nonempty")
    errors = []
    skipped = 0
    for theta, truth in holdout:
        if truth == 0:
            skipped += 1
            continue
        errors.append(abs(model(theta) - truth) / abs(truth))
    acc = max(0.0, 100.0 * (1.0 - float(np.mean(errors)))) if errors else 0.0
    if return_counts:
        return acc, len(errors), skipped
    return acc
