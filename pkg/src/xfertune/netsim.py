"""Deterministic shared-link transfer simulator.

Throughput model (noise-free), for an agent running s = cc*p streams while
other agents run ``other`` streams in total and the external load is L::

    share = bandwidth * (1 - L) * s / (s + other + knee)
    eff   = f_avg / (f_avg + c0 * rtt_ms * bandwidth * 125 / pp)
    mean  = share * eff

``rtt_ms * bandwidth_mbps * 125`` is the bandwidth-delay product in bytes.
Each transfer's rate is scaled by (1 + e), e ~ N(0, noise_sigma) truncated
at +-3 sigma and drawn from a generator seeded by (seed, agent, transfer #).

Concurrent agents are simulated as fluid flows: rates are recomputed at
every flow start/finish and load change. Agents may call ``transfer`` from
separate threads; the clock only advances once every registered agent is
blocked in a transfer, so outcomes do not depend on thread scheduling.
"""

from __future__ import annotations

import bisect
import math
import threading
import zlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import NetworkError
from .translog import Caps, ParameterPoint, TransferRecord

BDP_BYTES_PER_MBPS_MS = 125.0


@dataclass(frozen=True)
class SimConfig:
    bandwidth: float = 1000.0
    rtt: float = 40.0
    beta: int = 8
    max_streams: int = 32
    max_pipelining: int = 8
    knee: float = 6.0
    c0: float = 1.0
    noise_sigma: float = 0.03
    seed: int = 0
    load_timeline: tuple = ((0.0, 0.0),)
    src_endpoint: str = "siteA"
    dst_endpoint: str = "siteB"
    outage_at: float | None = None

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        timeline = tuple(sorted((float(t), float(l)) for t, l in self.load_timeline))
        if not timeline:
            timeline = ((0.0, 0.0),)
        for _, l in timeline:
            if not 0.0 <= l <= 1.0:
                raise ValueError(f"load fraction {l} outside [0, 1]")
        object.__setattr__(self, "load_timeline", timeline)

    @property
    def caps(self) -> Caps:
        return Caps(self.beta, self.max_streams, self.max_pipelining)

    def load_at(self, t: float) -> float:
        """Piecewise-constant, right-continuous external load."""
        times = [x for x, _ in self.load_timeline]
        i = bisect.bisect_right(times, t) - 1
        return self.load_timeline[max(i, 0)][1]

    def next_load_change(self, t: float) -> float:
        for x, _ in self.load_timeline:
            if x > t:
                return x
        return math.inf

    def with_load(self, load: float) -> "SimConfig":
        return replace(self, load_timeline=((0.0, float(load)),))


def efficiency(config: SimConfig, pp: int, avg_file_size: float) -> float:
    overhead = config.c0 * config.rtt * config.bandwidth * BDP_BYTES_PER_MBPS_MS / pp
    return avg_file_size / (avg_file_size + overhead)


def mean_throughput(config: SimConfig, theta: ParameterPoint, load: float,
                    other_streams: float = 0, avg_file_size: float = 1e9) -> float:
    """Noise-free throughput in Mbps."""
    config.caps.check(theta)
    s = theta.cc * theta.p
    share = config.bandwidth * (1.0 - load) * s / (s + other_streams + config.knee)
    return share * efficiency(config, theta.pp, avg_file_size)


def optimum(config: SimConfig, load: float, avg_file_size: float, other_streams: float = 0) -> tuple[ParameterPoint, float]:
    """Best feasible lattice point under the closed form (ties -> smallest (cc, p, pp))."""
    best = None
    for theta in config.caps.lattice():
        v = mean_throughput(config, theta, load, other_streams, avg_file_size)
        if best is None or v > best[1]:
            best = (theta, v)
    return best


def truncated_noise(rng: np.random.Generator, sigma: float) -> float:
    if sigma == 0:
        return 0.0
    while True:
        e = rng.normal(0.0, sigma)
        if abs(e) <= 3 * sigma:
            return float(e)


def _agent_tag(agent_id: str) -> int:
    return zlib.crc32(agent_id.encode())


@dataclass
class _Flow:
    agent: str
    theta: ParameterPoint
    streams: int
    eff: float
    mult: float
    bits: float
    remaining: float
    start: float


@dataclass
class _Agent:
    id: str
    avg_file_size: float
    transfers: int = 0
    clock: float = 0.0
    active: bool = True
    log: list = field(default_factory=list)


class SimNetwork:
    """Shared link answering transfer requests from one or more agents."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.clock = 0.0
        self._cond = threading.Condition()
        self._agents: dict[str, _Agent] = {}
        self._flows: dict[str, _Flow] = {}
        self._done: dict[str, tuple[float, float]] = {}
        self._failure: Exception | None = None
        # (time, {agent: rate}) rate snapshots, for conservation checks
        self.rate_log: list[tuple[float, dict]] = []

    def register(self, agent_id: str, avg_file_size: float = 1e9) -> "AgentHandle":
        with self._cond:
            if agent_id in self._agents and self._agents[agent_id].active:
                raise ValueError(f"agent {agent_id!r} already registered")
            self._agents[agent_id] = _Agent(agent_id, float(avg_file_size), clock=self.clock)
        return AgentHandle(self, agent_id)

    def close(self, agent_id: str) -> None:
        with self._cond:
            agent = self._agents.get(agent_id)
            if agent is not None:
                agent.active = False
            self._cond.notify_all()

    def agent_clock(self, agent_id: str) -> float:
        return self._agents[agent_id].clock

    def _rates(self) -> dict[str, float]:
        load = self.config.load_at(self.clock)
        total = sum(f.streams for f in self._flows.values())
        denom = total + self.config.knee
        return {
            a: self.config.bandwidth * (1.0 - load) * f.streams / denom * f.eff * f.mult
            for a, f in sorted(self._flows.items())
        }

    def _advance(self) -> None:
        """Run the fluid model until at least one flow finishes."""
        while True:
            rates = self._rates()
            self.rate_log.append((self.clock, rates))
            finish = {a: (self._flows[a].remaining / (r * 1e6) if r > 0 else math.inf) for a, r in rates.items()}
            dt_done = min(finish.values())
            dt_load = self.config.next_load_change(self.clock) - self.clock
            dt = min(dt_done, dt_load)
            if not math.isfinite(dt):
                raise NetworkError("link has no available capacity and no scheduled load change")
            if self.config.outage_at is not None and self.clock + dt > self.config.outage_at:
                self.clock = self.config.outage_at
                raise NetworkError(f"network outage at t={self.config.outage_at}")
            finished = [a for a, t in finish.items() if t <= dt * (1 + 1e-12)] if dt_done <= dt_load else []
            for a, r in rates.items():
                if a in finished:
                    self._flows[a].remaining = 0.0
                else:
                    self._flows[a].remaining -= r * 1e6 * dt
            self.clock += dt
            if finished:
                for a in finished:
                    f = self._flows.pop(a)
                    elapsed = self.clock - f.start
                    self._done[a] = (f.bits / elapsed / 1e6, elapsed)
                    agent = self._agents[a]
                    agent.clock = self.clock
                    agent.log.append((f.start, self.clock, f.theta, f.bits))
                return

    def transfer(self, agent_id: str, theta: ParameterPoint, nbytes: float,
                 avg_file_size: float | None = None) -> tuple[float, float]:
        """Move ``nbytes`` at ``theta``; returns (achieved Mbps, elapsed s)."""
        if nbytes <= 0:
            raise ValueError("transfer of zero bytes")
        self.config.caps.check(theta)
        with self._cond:
            if self._failure is not None:
                raise self._failure
            agent = self._agents.get(agent_id)
            if agent is None or not agent.active:
                raise ValueError(f"agent {agent_id!r} is not registered")
            if self.config.outage_at is not None and self.clock >= self.config.outage_at:
                raise NetworkError(f"network outage at t={self.config.outage_at}")
            rng = np.random.default_rng([self.config.seed, _agent_tag(agent_id), agent.transfers])
            agent.transfers += 1
            size = agent.avg_file_size if avg_file_size is None else float(avg_file_size)
            bits = float(nbytes) * 8.0
            self._flows[agent_id] = _Flow(
                agent_id, theta, theta.cc * theta.p, efficiency(self.config, theta.pp, size),
                1.0 + truncated_noise(rng, self.config.noise_sigma), bits, bits, self.clock,
            )
            while agent_id not in self._done:
                if self._failure is not None:
                    self._flows.pop(agent_id, None)
                    raise self._failure
                waiting = all(a.id in self._flows for a in self._agents.values() if a.active)
                if waiting:
                    try:
                        self._advance()
                    except NetworkError as exc:
                        self._failure = exc
                        self._flows.pop(agent_id, None)
                        self._cond.notify_all()
                        raise
                    self._cond.notify_all()
                else:
                    self._cond.wait()
            return self._done.pop(agent_id)


class AgentHandle:
    """One agent's view of a SimNetwork."""

    def __init__(self, network: SimNetwork, agent_id: str):
        self.network = network
        self.agent_id = agent_id

    @property
    def caps(self) -> Caps:
        return self.network.config.caps

    @property
    def clock(self) -> float:
        return self.network.agent_clock(self.agent_id)

    def transfer(self, theta: ParameterPoint, nbytes: float, avg_file_size: float | None = None) -> tuple[float, float]:
        return self.network.transfer(self.agent_id, theta, nbytes, avg_file_size)

    def close(self) -> None:
        self.network.close(self.agent_id)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def run_agents(network: SimNetwork, sessions: Sequence[tuple[str, float, object]]) -> list:
    """Run ``fn(handle)`` for each (agent_id, avg_file_size, fn) concurrently; results in input order."""
    handles = [network.register(aid, size) for aid, size, _ in sessions]
    results: list = [None] * len(sessions)
    errors: list = [None] * len(sessions)

    def worker(k):
        try:
            results[k] = sessions[k][2](handles[k])
        except Exception as exc:  # re-raised in caller
            errors[k] = exc
        finally:
            handles[k].close()

    threads = [threading.Thread(target=worker, args=(k,), daemon=True) for k in range(len(sessions))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for e in errors:
        if e is not None:
            raise e
    return results


# ------------------------------------------------------------- log synthesis

@dataclass(frozen=True)
class DesignCell:
    theta: ParameterPoint
    load: float
    repetitions: int = 1


def lattice_design(caps: Caps, loads: Iterable[float], repetitions: int) -> list[DesignCell]:
    return [DesignCell(theta, float(load), repetitions) for load in loads for theta in caps.lattice()]


def generate_log(config: SimConfig, design: Sequence[DesignCell], avg_file_size: float, num_files: int,
                 start_time: float = 1.7e9, id_prefix: str = "r", seed: int | None = None) -> list[TransferRecord]:
    """Synthetic history: one record per repetition, laid end to end in time.

    Each run of consecutive cells sharing a load L > 0 is overlapped by one
    background transfer from the same source at rate L * bandwidth, so the
    contender classification recovers an intensity of 1 - L.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    total = int(round(avg_file_size * num_files))
    avg = total / num_files
    records: list[TransferRecord] = []
    t = float(start_time)
    epoch_start, epoch_load = t, None
    background = 0

    def close_epoch(end):
        nonlocal background
        if epoch_load is None or epoch_load <= 0 or end <= epoch_start:
            return
        rate = epoch_load * config.bandwidth
        nbytes = max(1, int(round(rate * 1e6 * (end - epoch_start) / 8)))
        records.append(TransferRecord(
            id=f"{id_prefix}bg{background}", src_endpoint=config.src_endpoint,
            dst_endpoint=f"{config.dst_endpoint}-bg", start_time=epoch_start, end_time=end,
            rtt=config.rtt, bandwidth=config.bandwidth, avg_file_size=float(nbytes), num_files=1,
            total_size=nbytes, cc=1, p=1, pp=1, throughput=min(rate, config.bandwidth),
        ))
        background += 1

    k = 0
    for cell in design:
        if not 0.0 <= cell.load < 1.0:
            raise ValueError(f"design load {cell.load} must be in [0, 1)")
        if cell.load != epoch_load:
            close_epoch(t)
            epoch_start, epoch_load = t, cell.load
        mean = mean_throughput(config, cell.theta, cell.load, 0, avg)
        for _ in range(cell.repetitions):
            th = min(mean * (1.0 + truncated_noise(rng, config.noise_sigma)), config.bandwidth)
            duration = total * 8 / (th * 1e6)
            records.append(TransferRecord(
                id=f"{id_prefix}{k}", src_endpoint=config.src_endpoint, dst_endpoint=config.dst_endpoint,
                start_time=t, end_time=t + duration, rtt=config.rtt, bandwidth=config.bandwidth,
                avg_file_size=avg, num_files=int(num_files), total_size=total,
                cc=cell.theta.cc, p=cell.theta.p, pp=cell.theta.pp, throughput=th,
            ))
            t += duration
            k += 1
    close_epoch(t)
    records.sort(key=lambda r: (r.start_time, r.id))
    return records
