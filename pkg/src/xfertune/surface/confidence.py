"""Per-lattice-point sufficient statistics and the Gaussian confidence band."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

from ..translog import ParameterPoint

DEFAULT_Z = 1.96


@dataclass
class PointStats:
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, x: float) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def combine(self, other: "PointStats") -> "PointStats":
        if self.count == 0:
            return PointStats(other.count, other.mean, other.m2)
        if other.count == 0:
            return PointStats(self.count, self.mean, self.m2)
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return PointStats(n, mean, m2)

    @property
    def sigma(self) -> float:
        """Population standard deviation."""
        return math.sqrt(self.m2 / self.count) if self.count else 0.0


LatticeStats = dict  # ParameterPoint -> PointStats


def accumulate(observations: Iterable[tuple[ParameterPoint, float]]) -> LatticeStats:
    stats: LatticeStats = {}
    for theta, th in observations:
        stats.setdefault(theta, PointStats()).add(float(th))
    return stats


def merge_stats(a: Mapping[ParameterPoint, PointStats], b: Mapping[ParameterPoint, PointStats]) -> LatticeStats:
    out = {k: PointStats(v.count, v.mean, v.m2) for k, v in a.items()}
    for k, v in b.items():
        out[k] = out[k].combine(v) if k in out else PointStats(v.count, v.mean, v.m2)
    return out


@dataclass
class ConfidenceModel:
    """mu / sigma per observed lattice point, with a pooled sigma for the rest."""

    mu: dict
    sigma: dict
    counts: dict
    pooled_sigma: float
    z: float = DEFAULT_Z

    def sigma_at(self, theta: ParameterPoint) -> float:
        if self.counts.get(theta, 0) >= 2:
            return self.sigma[theta]
        return self.pooled_sigma

    def band(self, theta: ParameterPoint, mu: float | None = None) -> tuple[float, float]:
        centre = self.mu[theta] if mu is None else mu
        half = self.z * self.sigma_at(theta)
        return centre - half, centre + half

    def in_band(self, value: float, theta: ParameterPoint, mu: float | None = None) -> bool:
        lo, hi = self.band(theta, mu)
        return lo <= value <= hi


def in_band(value: float, mu: float, sigma: float, z: float = DEFAULT_Z) -> bool:
    return mu - z * sigma <= value <= mu + z * sigma


def fit_confidence(stats: Mapping[ParameterPoint, PointStats], z: float = DEFAULT_Z) -> ConfidenceModel:
    mu, sigma, counts = {}, {}, {}
    pooled_m2 = 0.0
    pooled_n = 0
    for theta in sorted(stats):
        st = stats[theta]
        mu[theta] = st.mean
        sigma[theta] = st.sigma
        counts[theta] = st.count
        if st.count >= 2:
            pooled_m2 += st.m2
            pooled_n += st.count
    pooled = math.sqrt(pooled_m2 / pooled_n) if pooled_n else 0.0
    return ConfidenceModel(mu, sigma, counts, pooled, z)
