"""Online phase: adaptive sampling over load-sorted surfaces, monitoring, and baseline tuners."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

from .errors import NetworkError
from .knowledge import ClusterKnowledge, SurfaceEntry, query_kb
from .translog import Caps, KnowledgeBase, ParameterPoint, TransferRequest

REPORT_VERSION = "1"


@dataclass(frozen=True)
class TunerConfig:
    sample_fraction: float = 0.05
    max_samples: int = 3
    convergence_streak: int = 1
    monitor_window: int = 3
    remainder_fraction: float = 0.05
    min_chunk_bytes: int = 1
    z: float | None = None
    caps: Caps | None = None

    def __post_init__(self):
        if not 0 < self.sample_fraction < 1:
            raise ValueError("sample_fraction must be in (0, 1)")
        if self.max_samples < 1:
            raise ValueError("max_samples must be >= 1")
        if self.monitor_window < 1:
            raise ValueError("monitor_window must be >= 1")
        if not 0 < self.remainder_fraction <= 1:
            raise ValueError("remainder_fraction must be in (0, 1]")


# ------------------------------------------------------------------ chunks

@dataclass(frozen=True)
class ChunkPlan:
    """File index lists; each index appears in exactly one sample chunk or the remainder."""

    sample_chunks: tuple
    remainder: tuple
    sizes: tuple

    def chunk_bytes(self, chunk: Sequence[int]) -> int:
        return sum(self.sizes[i] for i in chunk)

    @property
    def remainder_bytes(self) -> int:
        return self.chunk_bytes(self.remainder)


def _pack(indices: Sequence[int], sizes: Sequence[int], target: float, min_bytes: int = 0) -> tuple[list[int], list[int]]:
    """Take a prefix of ``indices`` whose byte sum is closest to ``target``."""
    chunk, total = [], 0
    k = 0
    while k < len(indices):
        nxt = total + sizes[indices[k]]
        if chunk and total >= min_bytes and abs(nxt - target) >= abs(total - target):
            break
        chunk.append(indices[k])
        total = nxt
        k += 1
    return chunk, list(indices[k:])


def plan_chunks(request: TransferRequest, sample_fraction: float = 0.05, max_samples: int = 3,
                min_chunk_bytes: int = 1) -> ChunkPlan:
    sizes = request.dataset
    total = request.total_size
    target = max(sample_fraction * total, min_chunk_bytes)
    rest = list(range(len(sizes)))
    chunks = []
    while rest and len(chunks) < max_samples:
        chunk, rest = _pack(rest, sizes, target, min_chunk_bytes)
        chunks.append(tuple(chunk))
    return ChunkPlan(tuple(chunks), tuple(rest), tuple(sizes))


def split_remainder(plan: ChunkPlan, fraction: float, total: int) -> list[tuple[int, ...]]:
    """Remainder cut into sub-chunks of about ``fraction * total`` bytes (monitoring cadence)."""
    rest = list(plan.remainder)
    out = []
    while rest:
        chunk, rest = _pack(rest, plan.sizes, fraction * total)
        out.append(tuple(chunk))
    return out


# ------------------------------------------------------------------ report

@dataclass
class ChunkResult:
    kind: str
    index: int
    nbytes: int
    theta: tuple
    achieved: float
    elapsed: float
    surface: int | None = None
    predicted: float | None = None
    decision: str = ""


@dataclass
class Phase:
    surface: int
    theta: tuple
    predicted: float
    nbytes: int = 0
    elapsed: float = 0.0

    @property
    def achieved(self) -> float:
        return self.nbytes * 8 / (self.elapsed * 1e6) if self.elapsed > 0 else 0.0


@dataclass
class TransferReport:
    tuner: str
    total_bytes: int
    num_files: int
    chunks: list = field(default_factory=list)
    phases: list = field(default_factory=list)
    complete: bool = True
    error: str | None = None
    samples_used: int = 0
    switches: int = 0
    retunes: int = 0
    degraded: bool = False
    committed_theta: tuple | None = None
    committed_surface: int | None = None
    convergence_steps: int | None = None
    cluster_key: str | None = None
    cluster_distance: float | None = None
    far_cluster: bool = False

    @property
    def bytes_done(self) -> int:
        return sum(c.nbytes for c in self.chunks)

    @property
    def wall_time(self) -> float:
        return sum(c.elapsed for c in self.chunks)

    @property
    def mean_throughput(self) -> float:
        t = self.wall_time
        return self.bytes_done * 8 / (t * 1e6) if t > 0 else 0.0

    def to_dict(self) -> dict[str, Any]:
        rel = relative_error(self)
        return {
            "version": REPORT_VERSION,
            "tuner": self.tuner,
            "complete": self.complete,
            "error": self.error,
            "total_bytes": self.total_bytes,
            "bytes_transferred": self.bytes_done,
            "num_files": self.num_files,
            "wall_time_s": self.wall_time,
            "mean_throughput_mbps": self.mean_throughput,
            "samples_used": self.samples_used,
            "switches": self.switches,
            "retunes": self.retunes,
            "degraded": self.degraded,
            "committed_theta": list(self.committed_theta) if self.committed_theta else None,
            "committed_surface": self.committed_surface,
            "convergence_steps": self.convergence_steps,
            "cluster_key": self.cluster_key,
            "cluster_distance": self.cluster_distance,
            "far_cluster": self.far_cluster,
            "relative_error_pct": rel,
            "accuracy_pct": None if rel is None else max(0.0, 100.0 - rel),
            "phases": [
                {"surface": p.surface, "theta": list(p.theta), "predicted": p.predicted,
                 "bytes": p.nbytes, "elapsed_s": p.elapsed, "achieved": p.achieved}
                for p in self.phases
            ],
            "chunks": [dict(asdict(c), theta=list(c.theta)) for c in self.chunks],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False) + "\n"


def relative_error(report: TransferReport) -> float | None:
    """Byte-weighted |achieved - predicted| / predicted over committed phases, in percent."""
    phases = [p for p in report.phases if p.elapsed > 0 and p.predicted > 0]
    if not phases:
        return None
    weight = sum(p.nbytes for p in phases)
    return 100.0 * sum(p.nbytes * abs(p.achieved - p.predicted) / p.predicted for p in phases) / weight


def accuracy_pct(achieved: float, predicted: float) -> float:
    if predicted <= 0:
        raise ValueError("predicted throughput must be positive")
    return max(0.0, 100.0 * (1.0 - abs(achieved - predicted) / predicted))


def accuracy(report: TransferReport) -> float | None:
    rel = relative_error(report)
    return None if rel is None else max(0.0, 100.0 - rel)


# -------------------------------------------------------------- algorithm

@dataclass(frozen=True)
class Keep:
    pass


@dataclass(frozen=True)
class Switch:
    surface: int
    theta: ParameterPoint


@dataclass(frozen=True)
class Committed:
    surface: int
    theta: ParameterPoint
    degraded: bool = False


@dataclass
class TunerState:
    surfaces: list
    active: int
    lo: int
    hi: int
    theta: ParameterPoint
    predicted: float
    max_samples: int = 3
    convergence_streak: int = 1
    z: float | None = None
    lighter_is_lower: bool = True
    samples_used: int = 0
    streak: int = 0
    switches: int = 0
    degraded: bool = False
    committed: bool = False
    log: list = field(default_factory=list)

    @property
    def window(self) -> int:
        return self.hi - self.lo + 1

    def band(self, idx: int | None = None, theta: ParameterPoint | None = None) -> tuple[float, float]:
        s: SurfaceEntry = self.surfaces[self.active if idx is None else idx]
        theta = self.theta if theta is None else theta
        mu = s.family(theta)
        if self.z is None:
            return s.confidence.band(theta, mu=mu)
        half = self.z * s.confidence.sigma_at(theta)
        return mu - half, mu + half


def first_probe(knowledge: ClusterKnowledge) -> tuple[ParameterPoint, float, int]:
    if not knowledge.surfaces:
        raise ValueError("cluster has no surfaces")
    idx = (len(knowledge.surfaces) - 1) // 2
    s = knowledge.surfaces[idx]
    return s.best, s.predicted_max, idx


def init_state(knowledge: ClusterKnowledge, config: TunerConfig | None = None,
               invert_intensity: bool = False) -> TunerState:
    config = config or TunerConfig()
    theta, pred, idx = first_probe(knowledge)
    return TunerState(
        surfaces=list(knowledge.surfaces), active=idx, lo=0, hi=len(knowledge.surfaces) - 1,
        theta=theta, predicted=pred, max_samples=config.max_samples,
        convergence_streak=config.convergence_streak, z=config.z,
        lighter_is_lower=not invert_intensity,
    )


def closest_surface(surfaces: Sequence[SurfaceEntry], th: float, lo: int = 0, hi: int | None = None) -> int:
    hi = len(surfaces) - 1 if hi is None else hi
    best = lo
    for k in range(lo, hi + 1):  # strict < keeps the lower index on ties
        if abs(surfaces[k].predicted_max - th) < abs(surfaces[best].predicted_max - th):
            best = k
    return best


def _activate(state: TunerState, idx: int) -> None:
    state.active = idx
    state.theta = state.surfaces[idx].best
    state.predicted = state.surfaces[idx].predicted_max


def step(state: TunerState, th_cur: float):
    """Advance the search with the throughput measured at ``state.theta``."""
    if state.committed:
        raise ValueError("tuner already committed")
    if th_cur < 0:
        raise ValueError("throughput must be >= 0")
    state.samples_used += 1
    low, high = state.band()
    state.log.append((state.active, state.theta, th_cur))
    if low <= th_cur <= high:
        state.streak += 1
        if state.streak >= state.convergence_streak or state.samples_used >= state.max_samples:
            state.committed = True
            return Committed(state.active, state.theta)
        return Keep()
    state.streak = 0
    # above band means less external load than assumed; move toward lighter-load surfaces
    toward_lower = (th_cur > high) == state.lighter_is_lower
    keep = math.ceil(state.window / 2)
    if toward_lower:
        lo, hi = max(state.lo, state.active - keep), state.active - 1
    else:
        lo, hi = state.active + 1, min(state.hi, state.active + keep)
    if lo > hi:
        idx = closest_surface(state.surfaces, th_cur)
        _activate(state, idx)
        state.committed = True
        state.degraded = True
        return Committed(idx, state.theta, degraded=True)
    state.lo, state.hi = lo, hi
    idx = closest_surface(state.surfaces, th_cur, lo, hi)
    _activate(state, idx)
    state.switches += 1
    if state.samples_used >= state.max_samples:
        state.committed = True
        return Committed(idx, state.theta)
    return Switch(idx, state.theta)


def monitor(window: Sequence[float], band: tuple[float, float]) -> str:
    """'Deviated' iff every measurement lies outside the band on the same side."""
    low, high = band
    if not window:
        return "Stable"
    if all(x > high for x in window) or all(x < low for x in window):
        return "Deviated"
    return "Stable"


# -------------------------------------------------------------- sessions

def _avg(plan: ChunkPlan, chunk: Sequence[int]) -> float:
    return plan.chunk_bytes(chunk) / len(chunk)


def _resolve_caps(kb: KnowledgeBase | None, config: TunerConfig) -> Caps:
    if config.caps is not None:
        return config.caps
    if kb is not None and kb.config:
        c = kb.config
        return Caps(int(c.get("beta", 8)), int(c.get("max_streams", 32)), int(c.get("max_pipelining", 8)))
    return Caps()


def run_transfer(request: TransferRequest, kb: KnowledgeBase, network, config: TunerConfig | None = None) -> TransferReport:
    """Probe, commit, then move the remainder while watching for persistent deviation."""
    config = config or TunerConfig()
    caps = _resolve_caps(kb, config)
    match = query_kb(kb, request)
    knowledge = match.knowledge
    report = TransferReport("asm", request.total_size, request.num_files,
                            cluster_key=knowledge.key.key_id, cluster_distance=match.distance,
                            far_cluster=match.far)
    plan = plan_chunks(request, config.sample_fraction, config.max_samples, config.min_chunk_bytes)
    state = init_state(knowledge, config, bool(kb.config.get("invert_intensity", False)))
    chunks = list(plan.sample_chunks)
    try:
        k = 0
        while not state.committed:
            if k >= len(chunks):
                # dataset exhausted during probing
                state.committed = True
                break
            chunk = chunks[k]
            caps.check(state.theta)
            surface, theta, pred = state.active, state.theta, state.predicted
            th, dt = network.transfer(theta, plan.chunk_bytes(chunk), _avg(plan, chunk))
            decision = step(state, th)
            report.chunks.append(ChunkResult("probe", k, plan.chunk_bytes(chunk), theta.as_tuple(), th, dt,
                                             surface, pred, type(decision).__name__))
            k += 1
        # unused sample chunks join the remainder
        leftover = ChunkPlan((), tuple(i for c in chunks[k:] for i in c) + plan.remainder, plan.sizes)
        report.samples_used = state.samples_used
        report.switches = state.switches
        report.degraded = state.degraded
        report.committed_theta = state.theta.as_tuple()
        report.committed_surface = state.active
        pieces = split_remainder(leftover, config.remainder_fraction, request.total_size)
        if pieces:
            phase = Phase(state.active, state.theta.as_tuple(), state.predicted)
            report.phases.append(phase)
        window: deque = deque(maxlen=config.monitor_window)
        for j, chunk in enumerate(pieces):
            caps.check(state.theta)
            ran = state.theta
            nbytes = plan.chunk_bytes(chunk)
            th, dt = network.transfer(ran, nbytes, _avg(plan, chunk))
            phase.nbytes += nbytes
            phase.elapsed += dt
            window.append(th)
            decision = ""
            if len(window) == config.monitor_window and monitor(window, state.band()) == "Deviated":
                # re-select from the most recent measurement
                idx = closest_surface(state.surfaces, th)
                decision = "Deviated"
                window.clear()
                if idx != state.active:
                    _activate(state, idx)
                    report.retunes += 1
                    decision = "Retune"
                    phase = Phase(state.active, state.theta.as_tuple(), state.predicted)
                    report.phases.append(phase)
            report.chunks.append(ChunkResult("remainder", j, nbytes, ran.as_tuple(), th, dt, decision=decision))
    except NetworkError as exc:
        report.complete = False
        report.error = str(exc)
        report.samples_used = state.samples_used
        report.switches = state.switches
    return report


def baseline_static(request: TransferRequest, theta: ParameterPoint, network, caps: Caps | None = None,
                    chunk_fraction: float = 1.0) -> TransferReport:
    """Whole dataset at fixed parameters."""
    caps = caps or network.caps
    caps.check(theta)
    report = TransferReport("static", request.total_size, request.num_files,
                            committed_theta=theta.as_tuple())
    plan = ChunkPlan((), tuple(range(len(request.dataset))), request.dataset)
    pieces = split_remainder(plan, chunk_fraction, request.total_size) if chunk_fraction < 1 else [plan.remainder]
    try:
        for j, chunk in enumerate(pieces):
            nbytes = plan.chunk_bytes(chunk)
            th, dt = network.transfer(theta, nbytes, _avg(plan, chunk))
            report.chunks.append(ChunkResult("whole", j, nbytes, theta.as_tuple(), th, dt))
    except NetworkError as exc:
        report.complete = False
        report.error = str(exc)
    return report


def _next_theta(theta: ParameterPoint, step_size: int, caps: Caps) -> ParameterPoint:
    pp = min(theta.pp + step_size, caps.max_pipelining, caps.beta)
    for cc, p in ((theta.cc + step_size, theta.p + step_size), (theta.cc + step_size, theta.p),
                  (theta.cc, theta.p + step_size)):
        cand = ParameterPoint(cc, p, pp)
        if caps.feasible(cand):
            return cand
    return ParameterPoint(theta.cc, theta.p, pp)


def baseline_additive(request: TransferRequest, network, step_size: int = 1, period: float = 0.05,
                      improve_eps: float = 0.01, caps: Caps | None = None) -> TransferReport:
    """Constant-step increase each period until throughput stops improving, then back off and hold."""
    caps = caps or network.caps
    report = TransferReport("additive", request.total_size, request.num_files)
    plan = ChunkPlan((), tuple(range(len(request.dataset))), request.dataset)
    pieces = split_remainder(plan, period, request.total_size)
    theta = ParameterPoint(1, 1, 1)
    prev_theta, prev_th = None, None
    holding = False
    try:
        for j, chunk in enumerate(pieces):
            nbytes = plan.chunk_bytes(chunk)
            th, dt = network.transfer(theta, nbytes, _avg(plan, chunk))
            decision = "hold" if holding else ""
            ran = theta
            if not holding:
                if prev_th is not None and th < prev_th * (1 + improve_eps):
                    theta = prev_theta
                    holding = True
                    report.convergence_steps = j
                    decision = "backoff"
                else:
                    nxt = _next_theta(theta, step_size, caps)
                    if nxt == theta:
                        holding = True
                        report.convergence_steps = j
                        decision = "capped"
                    else:
                        prev_theta, prev_th = theta, th
                        theta = nxt
                        decision = "step"
            report.chunks.append(ChunkResult("period", j, nbytes, ran.as_tuple(), th, dt, decision=decision))
    except NetworkError as exc:
        report.complete = False
        report.error = str(exc)
    report.committed_theta = theta.as_tuple()
    return report
