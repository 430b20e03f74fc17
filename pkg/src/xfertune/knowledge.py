"""Offline knowledge discovery: clusters -> load-tagged surfaces -> maxima -> sampling regions."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import cluster as clu
from .errors import KBVersionError
from .surface import (
    BicubicSurface,
    ConfidenceModel,
    PointStats,
    SurfaceFamily,
    fit_confidence,
    fit_family,
    merge_stats,
)
from .translog import Caps, KnowledgeBase, ParameterPoint, TransferRecord, TransferRequest, config_fingerprint

log = logging.getLogger(__name__)

HESSIAN_TOL = 1e-6
CONTENDER_CLASSES = ("same_pair", "src_out", "src_in", "dst_out", "dst_in")


@dataclass(frozen=True)
class OfflineConfig:
    algorithm: str = "kmeans"
    m_max: int = 8
    seed: int = 0
    min_samples: int = 8
    intensity_bin: float = 0.1
    invert_intensity: bool = False
    beta: int = 8
    max_streams: int = 32
    max_pipelining: int = 8
    z: float = 1.96
    region_radius: int = 1
    region_samples: int = 200
    region_picks: int = 8
    distance_threshold: float = 0.5

    @property
    def caps(self) -> Caps:
        return Caps(self.beta, self.max_streams, self.max_pipelining)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "OfflineConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in names})

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.to_dict())


# ------------------------------------------------------ contending transfers

@dataclass
class LoadProfile:
    intensity: float
    counts: dict
    rates: dict
    th_out: float


def load_intensity(bw: float, th_out: float) -> float:
    if bw <= 0:
        raise ValueError("bandwidth must be positive")
    if th_out < 0:
        raise ValueError("th_out must be >= 0")
    return min(1.0, max(0.0, (bw - th_out) / bw))


def _contender_class(target: TransferRecord, other: TransferRecord) -> str | None:
    s, d = target.src_endpoint, target.dst_endpoint
    if other.src_endpoint == s and other.dst_endpoint == d:
        return "same_pair"
    if other.src_endpoint == s:
        return "src_out"
    if other.dst_endpoint == s:
        return "src_in"
    if other.src_endpoint == d:
        return "dst_out"
    if other.dst_endpoint == d:
        return "dst_in"
    return None


def classify_contenders(target: TransferRecord, log_records: Iterable[TransferRecord],
                        invert: bool = False) -> LoadProfile:
    counts = dict.fromkeys(CONTENDER_CLASSES, 0)
    rates = dict.fromkeys(CONTENDER_CLASSES, 0.0)
    for other in log_records:
        if other is target or other.id == target.id:
            continue
        if not (other.start_time < target.end_time and target.start_time < other.end_time):
            continue
        kind = _contender_class(target, other)
        if kind is None:
            continue
        counts[kind] += 1
        rates[kind] += other.throughput
    th_out = min(target.bandwidth, sum(rates.values()))
    inten = load_intensity(target.bandwidth, th_out)
    return LoadProfile(1.0 - inten if invert else inten, counts, rates, th_out)


def log_intensities(records: Sequence[TransferRecord], invert: bool = False, block: int = 512) -> np.ndarray:
    """Load intensity of every record against the rest of the log (vectorized classify_contenders)."""
    n = len(records)
    if n == 0:
        return np.zeros(0)
    names = {}
    src = np.array([names.setdefault(r.src_endpoint, len(names)) for r in records])
    dst = np.array([names.setdefault(r.dst_endpoint, len(names)) for r in records])
    start = np.array([r.start_time for r in records])
    end = np.array([r.end_time for r in records])
    rate = np.array([r.throughput for r in records])
    bw = np.array([r.bandwidth for r in records])
    out = np.empty(n)
    for lo in range(0, n, block):
        hi = min(n, lo + block)
        idx = np.arange(lo, hi)
        overlap = (start[None, :] < end[idx, None]) & (end[None, :] > start[idx, None])
        overlap[np.arange(hi - lo), idx] = False
        s, d = src[idx, None], dst[idx, None]
        shares = (src[None, :] == s) | (dst[None, :] == s) | (src[None, :] == d) | (dst[None, :] == d)
        th_out = np.minimum(bw[idx], (overlap & shares) @ rate)
        out[lo:hi] = np.clip((bw[idx] - th_out) / bw[idx], 0.0, 1.0)
    return 1.0 - out if invert else out


def bin_intensity(value: float, width: float) -> float:
    return round(round(value / width) * width, 10)


# ------------------------------------------------------------------ maxima

@dataclass(frozen=True)
class LocalMax:
    theta: ParameterPoint
    value: float
    curvature_ok: bool


@dataclass
class Maxima:
    best: ParameterPoint
    value: float
    local: list


def _region_points(fam: SurfaceFamily, caps: Caps) -> list[ParameterPoint]:
    return [t for t in caps.lattice() if fam.contains(t)]


def find_maxima(fam: SurfaceFamily, caps: Caps) -> Maxima:
    """Local maxima over the feasible lattice and the global best among them.

    A point is a local maximum when no feasible lattice neighbour (Chebyshev
    distance 1) is higher. For points whose six axis neighbours are all
    feasible, the analytic Hessian is also tested for negative
    semi-definiteness; the outcome is kept in ``curvature_ok``.
    """
    points = _region_points(fam, caps)
    if not points:
        raise ValueError("empty feasible lattice inside the surface hull")
    values = {t: fam(t) for t in points}
    local = []
    for t in points:
        v = values[t]
        dominant = True
        for dcc in (-1, 0, 1):
            for dp in (-1, 0, 1):
                for dpp in (-1, 0, 1):
                    if dcc == dp == dpp == 0:
                        continue
                    nb = ParameterPoint(t.cc + dcc, t.p + dp, t.pp + dpp)
                    if nb in values and values[nb] > v:
                        dominant = False
                        break
                if not dominant:
                    break
            if not dominant:
                break
        if not dominant:
            continue
        axis = [
            ParameterPoint(t.cc + a, t.p + b, t.pp + c)
            for a, b, c in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))
        ]
        if all(nb in values for nb in axis):
            _, _, hess = fam.derivatives(t)
            ok = bool(np.linalg.eigvalsh(hess).max() <= HESSIAN_TOL)
        else:
            ok = True
        local.append(LocalMax(t, v, ok))
    best = None
    for lm in local:  # lexicographic order, strict > keeps the smallest on ties
        if best is None or lm.value > best.value:
            best = lm
    return Maxima(best.theta, best.value, local)


# --------------------------------------------------------- sampling regions

@dataclass
class SamplingRegion:
    maxima_neighborhoods: list
    discrimination_points: list

    @property
    def points(self) -> list[ParameterPoint]:
        return sorted(set(self.maxima_neighborhoods) | set(self.discrimination_points))

    def __contains__(self, theta) -> bool:
        return theta in set(self.maxima_neighborhoods) or theta in set(self.discrimination_points)


def discrimination_scores(families: Sequence[SurfaceFamily], samples: Sequence[ParameterPoint]) -> np.ndarray:
    """Smallest pairwise gap between surfaces at each sample point."""
    vals = np.array([[f(u) for u in samples] for f in families])
    n = len(families)
    gaps = np.full(len(samples), np.inf)
    for i in range(n):
        for j in range(i + 1, n):
            gaps = np.minimum(gaps, np.abs(vals[i] - vals[j]))
    return gaps


def select_regions(families: Sequence[SurfaceFamily], maxima: Sequence[ParameterPoint], caps: Caps,
                   radius: int = 1, samples: int = 200, picks: int = 8, seed: int = 0) -> SamplingRegion:
    if not families:
        raise ValueError("need at least one surface")
    if picks >= samples:
        raise ValueError(f"picks ({picks}) must be smaller than samples ({samples})")
    if picks < 1:
        raise ValueError("picks must be >= 1")
    common = [t for t in caps.lattice() if all(f.contains(t) for f in families)]
    r_m = sorted({
        t for t in common for best in maxima
        if max(abs(t.cc - best.cc), abs(t.p - best.p), abs(t.pp - best.pp)) <= radius
    })
    if len(families) < 2 or not common:
        return SamplingRegion(r_m, [])
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(common), size=samples, replace=samples > len(common))
    # with replacement only when the lattice is smaller than the sample budget
    u = [common[i] for i in idx]
    gaps = discrimination_scores(families, u)
    order = sorted(range(len(u)), key=lambda k: -gaps[k])
    r_c = []
    for k in order:  # duplicates (sampling with replacement) are skipped
        if u[k] not in r_c:
            r_c.append(u[k])
        if len(r_c) == picks:
            break
    return SamplingRegion(r_m, r_c)


# ------------------------------------------------------- cluster knowledge

@dataclass(frozen=True)
class ClusterKey:
    key_id: str
    centroid: tuple
    schema: tuple = clu.FEATURE_SCHEMA

    @classmethod
    def from_centroid(cls, centroid: Sequence[float]) -> "ClusterKey":
        c = tuple(float(v) for v in centroid)
        return cls("c:" + ",".join(f"{v:.6g}" for v in c), c)


@dataclass
class SurfaceEntry:
    intensity: float
    family: SurfaceFamily
    confidence: ConfidenceModel
    stats: dict
    maxima: Maxima

    @property
    def best(self) -> ParameterPoint:
        return self.maxima.best

    @property
    def predicted_max(self) -> float:
        return self.maxima.value

    def band(self, theta: ParameterPoint) -> tuple[float, float]:
        return self.confidence.band(theta, mu=self.family(theta))


@dataclass
class ClusterKnowledge:
    key: ClusterKey
    surfaces: list
    region: SamplingRegion
    n_records: int = 0

    def __post_init__(self):
        self.surfaces.sort(key=lambda s: -s.intensity)

    @property
    def intensities(self) -> list[float]:
        return [s.intensity for s in self.surfaces]

    def to_dict(self) -> dict[str, Any]:
        return {
            "key": {"id": self.key.key_id, "centroid": list(self.key.centroid), "schema": list(self.key.schema)},
            "n_records": self.n_records,
            "surfaces": [_surface_to_dict(s) for s in self.surfaces],
            "region": {
                "maxima_neighborhoods": [list(t.as_tuple()) for t in self.region.maxima_neighborhoods],
                "discrimination_points": [list(t.as_tuple()) for t in self.region.discrimination_points],
            },
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ClusterKnowledge":
        k = doc["key"]
        key = ClusterKey(k["id"], tuple(float(v) for v in k["centroid"]), tuple(k["schema"]))
        surfaces = [_surface_from_dict(s) for s in doc["surfaces"]]
        reg = doc["region"]
        region = SamplingRegion(
            [ParameterPoint(*t) for t in reg["maxima_neighborhoods"]],
            [ParameterPoint(*t) for t in reg["discrimination_points"]],
        )
        return cls(key, surfaces, region, int(doc.get("n_records", 0)))


def _surface_to_dict(s: SurfaceEntry) -> dict[str, Any]:
    fam = s.family
    slices = []
    for pp, sl in fam.slices.items():
        mask = fam.synthetic.get(pp, np.zeros(sl.shape, dtype=bool))
        slices.append({
            "pp_value": pp,
            "grid": {
                "p": sl.p_axis.tolist(),
                "cc": sl.cc_axis.tolist(),
                "values": sl.values.tolist(),
                "synthetic": mask.tolist(),
            },
            "node_derivatives": {"d1": sl.d1.tolist(), "d2": sl.d2.tolist(), "d12": sl.d12.tolist()},
        })
    conf = s.confidence
    return {
        "intensity": s.intensity,
        "slices": slices,
        "confidence": {
            "z": conf.z,
            "pooled_sigma": conf.pooled_sigma,
            "points": [[t.cc, t.p, t.pp, conf.mu[t], conf.sigma[t], conf.counts[t]] for t in sorted(conf.mu)],
        },
        "stats": [[t.cc, t.p, t.pp, st.count, st.mean, st.m2] for t, st in sorted(s.stats.items())],
        "maximum": {"theta": list(s.maxima.best.as_tuple()), "predicted": s.maxima.value},
        "local_maxima": [[*lm.theta.as_tuple(), lm.value, lm.curvature_ok] for lm in s.maxima.local],
    }


def _surface_from_dict(doc: Mapping[str, Any]) -> SurfaceEntry:
    slices, synthetic = {}, {}
    for sl in doc["slices"]:
        g, nd = sl["grid"], sl["node_derivatives"]
        pp = int(sl["pp_value"])
        slices[pp] = BicubicSurface(g["p"], g["cc"], g["values"], nd["d1"], nd["d2"], nd["d12"])
        synthetic[pp] = np.array(g["synthetic"], dtype=bool)
    fam = SurfaceFamily(slices, synthetic)
    c = doc["confidence"]
    mu, sigma, counts = {}, {}, {}
    for cc, p, pp, m, sd, n in c["points"]:
        t = ParameterPoint(int(cc), int(p), int(pp))
        mu[t], sigma[t], counts[t] = float(m), float(sd), int(n)
    conf = ConfidenceModel(mu, sigma, counts, float(c["pooled_sigma"]), float(c["z"]))
    stats = {ParameterPoint(int(cc), int(p), int(pp)): PointStats(int(n), float(m), float(m2))
             for cc, p, pp, n, m, m2 in doc["stats"]}
    mx = doc["maximum"]
    local = [LocalMax(ParameterPoint(int(a), int(b), int(c_)), float(v), bool(ok))
             for a, b, c_, v, ok in doc["local_maxima"]]
    maxima = Maxima(ParameterPoint(*mx["theta"]), float(mx["predicted"]), local)
    return SurfaceEntry(float(doc["intensity"]), fam, conf, stats, maxima)


# ---------------------------------------------------------------- build

def _build_surface(intensity: float, stats: dict, config: OfflineConfig) -> SurfaceEntry:
    fam = fit_family(stats)
    conf = fit_confidence(stats, config.z)
    return SurfaceEntry(intensity, fam, conf, stats, find_maxima(fam, config.caps))


def _assemble(key: ClusterKey, bins: Mapping[float, dict], n_records: int,
              config: OfflineConfig) -> ClusterKnowledge | None:
    surfaces = []
    for inten in sorted(bins, reverse=True):
        try:
            surfaces.append(_build_surface(inten, bins[inten], config))
        except ValueError as exc:
            log.warning("cluster %s: surface at intensity %s skipped: %s", key.key_id, inten, exc)
    if not surfaces:
        return None
    region = select_regions(
        [s.family for s in surfaces], [s.best for s in surfaces], config.caps,
        config.region_radius, config.region_samples, config.region_picks, config.seed,
    )
    return ClusterKnowledge(key, surfaces, region, n_records)


def _cluster_records(raw: np.ndarray, config: OfflineConfig) -> tuple[np.ndarray, float]:
    lo, hi = clu.feature_bounds(raw)
    x = clu.normalize(raw, lo, hi)
    distinct = len(np.unique(x, axis=0))
    if distinct < 2 or len(x) < 3:
        return np.zeros(len(x), dtype=int), 0.0
    top = min(config.m_max, distinct, len(x) - 1)
    if top < 2:
        return np.zeros(len(x), dtype=int), 0.0
    c = clu.select_m(x, range(2, top + 1), config.algorithm, config.seed)
    return c.assignments, c.ch_score


def build_kb(records: Sequence[TransferRecord], config: OfflineConfig | None = None) -> KnowledgeBase:
    """Cluster the log, bin each cluster by load intensity and fit one surface per bin."""
    config = config or OfflineConfig()
    records = list(records)
    if not records:
        raise ValueError("cannot build a knowledge base from an empty log")
    raw = np.array([clu.raw_features(r) for r in records])
    assign, ch = _cluster_records(raw, config)
    intens = log_intensities(records, config.invert_intensity)
    entries = {}
    for cid in range(int(assign.max()) + 1):
        members = np.flatnonzero(assign == cid)
        key = ClusterKey.from_centroid(raw[members].mean(axis=0))
        if len(members) < config.min_samples:
            log.warning("cluster %s skipped: %d records < min_samples=%d", key.key_id, len(members), config.min_samples)
            continue
        bins: dict[float, list] = {}
        for i in members:
            bins.setdefault(bin_intensity(intens[i], config.intensity_bin), []).append(records[i])
        bin_stats = {}
        for inten, recs in bins.items():
            if len(recs) < config.min_samples:
                log.warning("cluster %s: intensity bin %s skipped: %d records", key.key_id, inten, len(recs))
                continue
            st: dict = {}
            for r in recs:
                st.setdefault(r.theta, PointStats()).add(r.throughput)
            bin_stats[inten] = st
        ck = _assemble(key, bin_stats, len(members), config)
        if ck is None:
            log.warning("cluster %s skipped: no surface could be fitted", key.key_id)
            continue
        entries[key.key_id] = ck
    kb = KnowledgeBase(
        entries=entries,
        built_at=max(r.end_time for r in records),
        config_fingerprint=config.fingerprint,
        config=config.to_dict(),
        feature_bounds=tuple(tuple(float(v) for v in b) for b in clu.feature_bounds(raw)),
    )
    kb.ch_score = ch
    kb.n_clusters = int(assign.max()) + 1
    return kb


def merge_kb(base: KnowledgeBase, delta: KnowledgeBase) -> KnowledgeBase:
    """Union by cluster key; colliding keys are refit from pooled per-point statistics."""
    if base.config_fingerprint != delta.config_fingerprint:
        raise KBVersionError(
            f"cannot merge knowledge bases with fingerprints {base.config_fingerprint!r} and {delta.config_fingerprint!r}"
        )
    if not delta.entries:
        return base
    if not base.entries:
        return delta
    config = OfflineConfig.from_dict(base.config)
    entries = dict(base.entries)
    for kid, ck in delta.entries.items():
        if kid not in entries:
            entries[kid] = ck
            continue
        old = entries[kid]
        bins = {s.intensity: s.stats for s in old.surfaces}
        for s in ck.surfaces:
            bins[s.intensity] = merge_stats(bins[s.intensity], s.stats) if s.intensity in bins else s.stats
        n = old.n_records + ck.n_records
        centroid = (np.array(old.key.centroid) * old.n_records + np.array(ck.key.centroid) * ck.n_records) / n
        key = ClusterKey(kid, tuple(float(v) for v in centroid), old.key.schema)
        merged = _assemble(key, bins, n, config)
        if merged is not None:
            entries[kid] = merged
    lo = tuple(min(a, b) for a, b in zip(base.feature_bounds[0], delta.feature_bounds[0]))
    hi = tuple(max(a, b) for a, b in zip(base.feature_bounds[1], delta.feature_bounds[1]))
    return KnowledgeBase(entries, max(base.built_at, delta.built_at), base.config_fingerprint,
                         dict(base.config), (lo, hi))


# ---------------------------------------------------------------- query

@dataclass
class QueryMatch:
    knowledge: ClusterKnowledge
    distance: float
    far: bool
    cluster_index: int


def _kb_index(kb: KnowledgeBase):
    cached = getattr(kb, "_index", None)
    if cached is not None and cached[0] == len(kb.entries):
        return cached
    keys = sorted(kb.entries)
    cents = np.array([kb.entries[k].key.centroid for k in keys])
    lo, hi = kb.feature_bounds
    normed = clu.normalize(cents, lo, hi)
    kb._index = (len(keys), keys, normed)
    return kb._index


def query_kb(kb: KnowledgeBase, request: TransferRequest) -> QueryMatch:
    if not kb.entries:
        raise ValueError("knowledge base is empty")
    _, keys, normed = _kb_index(kb)
    lo, hi = kb.feature_bounds
    q = clu.normalize(np.array([clu.raw_features(request)]), lo, hi)[0]
    dists = np.sqrt(((normed - q) ** 2).sum(axis=1))
    best = int(np.argmin(dists))  # first index wins ties
    threshold = float(kb.config.get("distance_threshold", OfflineConfig.distance_threshold))
    dist = float(dists[best])
    return QueryMatch(kb.entries[keys[best]], dist, dist > threshold, best)
