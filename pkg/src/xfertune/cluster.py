"""Clustering of transfer logs: K-means++, centroid-linkage HAC, CH index."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InfeasibleError

FEATURE_SCHEMA = ("rtt", "bandwidth", "log10_avg_file_size", "log10_num_files")


def raw_features(item) -> tuple[float, float, float, float]:
    """Feature tuple of a TransferRecord or TransferRequest, before normalization."""
    return (
        float(item.rtt),
        float(item.bandwidth),
        math.log10(item.avg_file_size),
        math.log10(item.num_files),
    )


def feature_bounds(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    raw = np.asarray(raw, dtype=float)
    return raw.min(axis=0), raw.max(axis=0)


def normalize(raw: np.ndarray, lo: Sequence[float], hi: Sequence[float]) -> np.ndarray:
    """Min-max scale to [0, 1]; constant dimensions map to 0."""
    raw = np.asarray(raw, dtype=float)
    lo = np.asarray(lo, dtype=float)
    span = np.asarray(hi, dtype=float) - lo
    span = np.where(span > 0, span, 1.0)
    return (raw - lo) / span


def pairwise_distance(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


@dataclass
class Clustering:
    assignments: np.ndarray
    centroids: np.ndarray
    m: int
    ch_score: float = float("nan")
    # per-iteration objective (kmeans) or (id_a, id_b, distance) merges (hac)
    history: list = field(default_factory=list)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.m)


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _relabel(assign: np.ndarray, m: int) -> np.ndarray:
    """Renumber cluster ids by order of first appearance."""
    order = []
    seen = set()
    for a in assign:
        if a not in seen:
            seen.add(a)
            order.append(a)
            if len(order) == m:
                break
    mapping = np.empty(max(order) + 1 if order else 0, dtype=int)
    for new, old in enumerate(order):
        mapping[old] = new
    return mapping[assign]


def _centroids(x: np.ndarray, assign: np.ndarray, m: int) -> np.ndarray:
    sums = np.zeros((m, x.shape[1]))
    np.add.at(sums, assign, x)
    counts = np.bincount(assign, minlength=m)
    return sums / counts[:, None]


def _inertia(x: np.ndarray, assign: np.ndarray, centers: np.ndarray) -> float:
    return float(((x - centers[assign]) ** 2).sum())


def _distinct(x: np.ndarray) -> int:
    return len(np.unique(x, axis=0))


def kmeanspp(vectors, m: int, seed: int = 0, max_iters: int = 100) -> Clustering:
    x = np.asarray(vectors, dtype=float)
    n = len(x)
    if m < 1:
        raise InfeasibleError("m must be >= 1")
    if m > _distinct(x):
        raise InfeasibleError(f"m={m} exceeds the number of distinct vectors ({_distinct(x)})")
    rng = np.random.default_rng(seed)

    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, m):
        probs = d2 / d2.sum()
        nxt = x[rng.choice(n, p=probs)]
        centers.append(nxt)
        d2 = np.minimum(d2, ((x - nxt) ** 2).sum(axis=1))
    centers = np.array(centers)

    assign = np.argmin(_sq_dists(x, centers), axis=1)
    history = []
    for _ in range(max_iters):
        counts = np.bincount(assign, minlength=m)
        for empty in np.flatnonzero(counts == 0):
            # steal the point farthest from its center
            far = int(np.argmax(((x - centers[assign]) ** 2).sum(axis=1)))
            assign[far] = empty
            counts = np.bincount(assign, minlength=m)
        centers = _centroids(x, assign, m)
        history.append(_inertia(x, assign, centers))
        new = np.argmin(_sq_dists(x, centers), axis=1)
        if np.array_equal(new, assign):
            break
        assign = new

    assign = _relabel(assign, m)
    return Clustering(assign, _centroids(x, assign, m), m, history=history)


def hac_upgma(vectors, m: int) -> Clustering:
    """Agglomerate by centroid distance until ``m`` clusters remain.

    Identical vectors are collapsed up front (they would merge first at
    distance zero anyway), which keeps the proximity matrix small.
    """
    x = np.asarray(vectors, dtype=float)
    n = len(x)
    if m < 1:
        raise InfeasibleError("m must be >= 1")
    if m > n:
        raise InfeasibleError(f"m={m} exceeds the number of vectors ({n})")

    uniq, inverse = np.unique(x, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    if m <= len(uniq):
        # order seeds by first occurrence so ids follow input order
        first = np.full(len(uniq), n)
        np.minimum.at(first, inverse, np.arange(n))
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        points = uniq[order]
        weights = np.bincount(rank[inverse], minlength=len(uniq)).astype(float)
        point_of = rank[inverse]
    else:
        points = x.copy()
        weights = np.ones(n)
        point_of = np.arange(n)

    k = len(points)
    cents = points.copy()
    members = [[i] for i in range(k)]
    alive = np.ones(k, dtype=bool)
    dist = np.sqrt(_sq_dists(cents, cents))
    np.fill_diagonal(dist, np.inf)
    history = []
    count = k
    while count > m:
        flat = int(np.argmin(dist))
        i, j = divmod(flat, k)
        if i > j:
            i, j = j, i
        history.append((i, j, float(dist[i, j])))
        w = weights[i] + weights[j]
        cents[i] = (weights[i] * cents[i] + weights[j] * cents[j]) / w
        weights[i] = w
        members[i].extend(members[j])
        members[j] = []
        alive[j] = False
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        row = np.sqrt(((cents - cents[i]) ** 2).sum(axis=1))
        row[~alive] = np.inf
        row[i] = np.inf
        dist[i, :] = row
        dist[:, i] = row
        count -= 1

    label_of_point = np.empty(k, dtype=int)
    for cid, idx in enumerate(np.flatnonzero(alive)):
        label_of_point[members[idx]] = cid
    assign = _relabel(label_of_point[point_of], m)
    return Clustering(assign, _centroids(x, assign, m), m, history=history)


def ch_index(vectors, clustering: Clustering) -> float:
    """Calinski-Harabasz score: [B/(m-1)] / [W/(n-m)]."""
    x = np.asarray(vectors, dtype=float)
    n, m = len(x), clustering.m
    if not 2 <= m < n:
        raise ValueError(f"CH index needs 2 <= m < n (m={m}, n={n})")
    assign = clustering.assignments
    cents = _centroids(x, assign, m)
    counts = np.bincount(assign, minlength=m)
    overall = x.mean(axis=0)
    between = float((counts * ((cents - overall) ** 2).sum(axis=1)).sum())
    within = _inertia(x, assign, cents)
    if between == 0.0:
        return 0.0
    if within == 0.0:
        return math.inf
    return (between / (m - 1)) / (within / (n - m))


def cluster(vectors, m: int, algorithm: str = "kmeans", seed: int = 0) -> Clustering:
    if algorithm == "kmeans":
        return kmeanspp(vectors, m, seed=seed)
    if algorithm == "hac":
        return hac_upgma(vectors, m)
    raise ValueError(f"unknown clustering algorithm {algorithm!r}")


def select_m(vectors, m_range: Iterable[int], algorithm: str = "kmeans", seed: int = 0) -> Clustering:
    """Clustering with the largest CH score over ``m_range`` (ties -> smaller m)."""
    x = np.asarray(vectors, dtype=float)
    candidates = sorted(set(m_range))
    if not candidates:
        raise ValueError("empty m range")
    distinct = _distinct(x)
    best = None
    for m in candidates:
        if algorithm == "kmeans" and m > distinct:
            continue
        c = cluster(x, m, algorithm, seed)
        c.ch_score = ch_index(x, c)
        if best is None or c.ch_score > best.ch_score:
            best = c
    if best is None:
        raise InfeasibleError("no feasible cluster count in range")
    return best
