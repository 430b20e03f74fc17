"""Scenario suites that compare tuners on the simulator and emit CSV tables."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import spearmanr

from .knowledge import OfflineConfig, build_kb
from .netsim import SimConfig, SimNetwork, generate_log, lattice_design, optimum, run_agents
from .surface import accumulate, fit_family, fit_regression, surface_accuracy
from .translog import KnowledgeBase, ParameterPoint, TransferRequest
from .tuner import (
    TransferReport,
    TunerConfig,
    accuracy,
    baseline_additive,
    baseline_static,
    run_transfer,
)

STANDARD = SimConfig(bandwidth=1000.0, rtt=40.0)
DATASET_CLASSES = {
    "small": (1_000_000, 20_000),
    "medium": (100_000_000, 200),
    "large": (5_000_000_000, 20),
}
KB_LOADS = (0.0, 0.2, 0.4, 0.6)
LOADS_BY_SURFACE_COUNT = {
    2: (0.0, 0.4),
    4: (0.0, 0.2, 0.4, 0.6),
    8: (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7),
}
TRAIN_SEED = 7919
TUNERS = ("asm", "additive", "static")
KNEE_DRIFT_PER_DAY = 0.5
SMALL_MAX = 10_000_000
LARGE_MIN = 1_000_000_000


def dataset_class(avg_file_size: float) -> str:
    if avg_file_size < SMALL_MAX:
        return "small"
    if avg_file_size <= LARGE_MIN:
        return "medium"
    return "large"


def request_for(config: SimConfig, avg_file_size: int, num_files: int) -> TransferRequest:
    return TransferRequest.uniform(config.src_endpoint, config.dst_endpoint, config.rtt, config.bandwidth,
                                   int(avg_file_size), int(num_files))


@lru_cache(maxsize=64)
def training_kb(config: SimConfig = STANDARD, avg_file_size: int = 100_000_000, num_files: int = 200,
                loads: tuple = KB_LOADS, repetitions: int = 3, seed: int = TRAIN_SEED,
                offline: OfflineConfig | None = None) -> KnowledgeBase:
    """KB from a full-lattice log at each load level (cached; treat as read-only)."""
    design = lattice_design(config.caps, loads, repetitions)
    log_records = generate_log(replace(config, seed=seed), design, avg_file_size, num_files)
    level = logging.getLogger("xfertune.knowledge").level
    logging.getLogger("xfertune.knowledge").setLevel(logging.ERROR)
    try:
        return build_kb(log_records, offline or OfflineConfig())
    finally:
        logging.getLogger("xfertune.knowledge").setLevel(level)


def run_tuner(tuner: str, request: TransferRequest, kb: KnowledgeBase | None, handle,
              tuner_config: TunerConfig | None = None, theta: ParameterPoint | None = None) -> TransferReport:
    if tuner == "asm":
        return run_transfer(request, kb, handle, tuner_config)
    if tuner == "static":
        return baseline_static(request, theta or ParameterPoint(1, 1, 1), handle)
    if tuner == "additive":
        return baseline_additive(request, handle)
    raise ValueError(f"unknown tuner {tuner!r}; choose from {', '.join(TUNERS)}")


def single_run(tuner: str, config: SimConfig, kb: KnowledgeBase | None, avg_file_size: int, num_files: int,
               tuner_config: TunerConfig | None = None) -> TransferReport:
    handle = SimNetwork(config).register("agent0", avg_file_size)
    return run_tuner(tuner, request_for(config, avg_file_size, num_files), kb, handle, tuner_config)


@dataclass
class SuiteResult:
    name: str
    tables: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for fname, rows in self.tables.items():
            path = out / fname
            write_csv(rows, path)
            paths.append(path)
        return paths


def write_csv(rows: Sequence[dict], path: str | Path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    cols = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _mean(xs: Iterable[float]) -> float:
    xs = list(xs)
    return float(np.mean(xs)) if xs else math.nan


# ------------------------------------------------------------- throughput

def throughput_suite(seeds: Sequence[int] = range(20)) -> SuiteResult:
    """Per-tuner mean throughput by dataset class, load cycling through the KB levels."""
    rows = []
    for cls, (f, n) in DATASET_CLASSES.items():
        kb = training_kb(STANDARD, f, n)
        for seed in seeds:
            load = KB_LOADS[seed % len(KB_LOADS)]
            cfg = replace(STANDARD, seed=seed, load_timeline=((0.0, load),))
            for tuner in TUNERS:
                rep = single_run(tuner, cfg, kb, f, n)
                rows.append({"class": cls, "seed": seed, "load": load, "tuner": tuner,
                             "throughput_mbps": rep.mean_throughput, "samples_used": rep.samples_used})
    summary = []
    for cls in list(DATASET_CLASSES) + ["all"]:
        for tuner in TUNERS:
            vals = [r["throughput_mbps"] for r in rows if r["tuner"] == tuner and cls in ("all", r["class"])]
            summary.append({"class": cls, "tuner": tuner, "mean_mbps": _mean(vals),
                            "std_mbps": float(np.std(vals)), "runs": len(vals)})
    overall = {r["tuner"]: r["mean_mbps"] for r in summary if r["class"] == "all"}
    return SuiteResult("throughput", {"throughput.csv": rows, "throughput_summary.csv": summary}, overall)


# ------------------------------------------------------------ convergence

def convergence_suite(seeds: Sequence[int] = range(50), avg_file_size: int = 100_000_000,
                      num_files: int = 200) -> SuiteResult:
    """Accuracy against the number of probes, and the probe count to commit for several KB sizes."""
    kb = training_kb(STANDARD, avg_file_size, num_files)
    runs = []
    for seed in seeds:
        k = seed % len(KB_LOADS)
        cfg = replace(STANDARD, seed=seed, load_timeline=((0.0, KB_LOADS[k]),))
        for budget in (1, 2, 3):
            rep = single_run("asm", cfg, kb, avg_file_size, num_files, TunerConfig(max_samples=budget))
            runs.append({"seed": seed, "max_samples": budget, "true_surface": k,
                         "committed_surface": rep.committed_surface, "samples_used": rep.samples_used,
                         "accuracy_pct": accuracy(rep), "degraded": rep.degraded})
    curve = []
    for budget in (1, 2, 3):
        sel = [r for r in runs if r["max_samples"] == budget]
        curve.append({"samples": budget, "accuracy_pct": _mean(r["accuracy_pct"] for r in sel),
                      "frac_ge_90": _mean(float(r["accuracy_pct"] >= 90) for r in sel)})
    count_rows = []
    for n_surfaces, loads in LOADS_BY_SURFACE_COUNT.items():
        kb_n = training_kb(STANDARD, avg_file_size, num_files, loads)
        bound = math.ceil(math.log2(n_surfaces)) + 1
        for seed in seeds:
            k = seed % n_surfaces
            cfg = replace(STANDARD, seed=seed, load_timeline=((0.0, loads[k]),))
            rep = single_run("asm", cfg, kb_n, avg_file_size, num_files)
            count_rows.append({"n_surfaces": n_surfaces, "seed": seed, "true_surface": k,
                             "surfaces": len(next(iter(kb_n.entries.values())).surfaces),
                             "committed_surface": rep.committed_surface, "samples_used": rep.samples_used,
                             "within_bound": rep.samples_used <= bound, "accuracy_pct": accuracy(rep)})
    three = [r for r in runs if r["max_samples"] == 3]
    metrics = {
        "frac_ge_90_within_3": _mean(float(r["accuracy_pct"] >= 90 and r["samples_used"] <= 3) for r in three),
        "probes_within_bound": _mean(float(r["within_bound"]) for r in count_rows),
        "correct_surface": _mean(float(r["committed_surface"] == r["true_surface"]) for r in count_rows),
    }
    return SuiteResult("convergence", {"convergence.csv": curve, "convergence_runs.csv": runs,
                                       "convergence_by_surfaces.csv": count_rows}, metrics)


# --------------------------------------------------------------- fairness

def concurrent_run(tuner: str, config: SimConfig, kb: KnowledgeBase | None, agents: int,
                   avg_file_size: int, num_files: int) -> tuple[list[TransferReport], float]:
    """``agents`` identical sessions sharing one link; returns reports and the makespan."""
    net = SimNetwork(config)
    req = request_for(config, avg_file_size, num_files)
    sessions = [(f"agent{i}", avg_file_size, lambda h: run_tuner(tuner, req, kb, h)) for i in range(agents)]
    reports = run_agents(net, sessions)
    return reports, net.clock


def fairness_suite(seeds: Sequence[int] = range(10), agents: int = 4, tuners: Sequence[str] = TUNERS) -> SuiteResult:
    f, n = DATASET_CLASSES["large"]
    kb = training_kb(STANDARD, f, n)
    per_agent, summary = [], []
    for seed in seeds:
        load = KB_LOADS[seed % len(KB_LOADS)]
        cfg = replace(STANDARD, seed=seed, load_timeline=((0.0, load),))
        for tuner in tuners:
            reports, makespan = concurrent_run(tuner, cfg, kb, agents, f, n)
            th = np.array([r.mean_throughput for r in reports])
            for i, r in enumerate(reports):
                per_agent.append({"seed": seed, "tuner": tuner, "agent": i, "throughput_mbps": r.mean_throughput})
            total_bits = sum(r.bytes_done for r in reports) * 8
            util = total_bits / (makespan * 1e6) / (cfg.bandwidth * (1 - load))
            summary.append({"seed": seed, "tuner": tuner, "load": load, "mean_mbps": float(th.mean()),
                            "std_mbps": float(th.std()), "cv": float(th.std() / th.mean()),
                            "utilization": util})
    table = []
    for tuner in tuners:
        sel = [s for s in summary if s["tuner"] == tuner]
        table.append({"tuner": tuner, "mean_mbps": _mean(s["mean_mbps"] for s in sel),
                      "std_mbps": _mean(s["std_mbps"] for s in sel), "cv": _mean(s["cv"] for s in sel),
                      "max_cv": max(s["cv"] for s in sel), "utilization": _mean(s["utilization"] for s in sel),
                      "min_utilization": min(s["utilization"] for s in sel)})
    metrics = {t["tuner"]: t for t in table}
    return SuiteResult("fairness", {"fairness_agents.csv": per_agent, "fairness_runs.csv": summary,
                                    "fairness.csv": table}, metrics)


# -------------------------------------------------------------- staleness

def staleness_suite(seeds: Sequence[int] = range(20), ages: Sequence[int] = range(0, 11),
                    avg_file_size: int = 100_000_000, num_files: int = 200,
                    drift: float = KNEE_DRIFT_PER_DAY) -> SuiteResult:
    """Accuracy when the KB comes from logs recorded ``age`` days before the transfer.

    The simulated link drifts day by day (the knee grows by ``drift``
    streams per day into the past), so older logs describe a network that
    no longer exists.
    """
    today = STANDARD
    rows = []
    for age in ages:
        then = replace(today, knee=today.knee + drift * age)
        kb = training_kb(then, avg_file_size, num_files, KB_LOADS, 3, TRAIN_SEED + age)
        for seed in seeds:
            load = KB_LOADS[seed % len(KB_LOADS)]
            cfg = replace(today, seed=seed, load_timeline=((0.0, load),))
            rep = single_run("asm", cfg, kb, avg_file_size, num_files)
            rows.append({"age_days": age, "seed": seed, "load": load, "accuracy_pct": accuracy(rep),
                         "throughput_mbps": rep.mean_throughput})
    curve = [{"age_days": a, "accuracy_pct": _mean(r["accuracy_pct"] for r in rows if r["age_days"] == a)}
             for a in ages]
    rho = float(spearmanr([c["age_days"] for c in curve], [c["accuracy_pct"] for c in curve]).statistic)
    return SuiteResult("staleness", {"staleness.csv": curve, "staleness_runs.csv": rows},
                       {"spearman_rho": rho, "freshest": curve[0]["accuracy_pct"]})


# ---------------------------------------------------------------- surface

def surface_suite(seeds: Sequence[int] = range(10), noise: float = 0.05, load: float = 0.2,
                  avg_file_size: int = 1_000_000, num_files: int = 1000, repetitions: int = 3) -> SuiteResult:
    """Holdout accuracy of the spline family against cubic and quadratic regression."""
    rows = []
    for seed in seeds:
        cfg = replace(STANDARD, noise_sigma=noise)
        train = generate_log(cfg, lattice_design(cfg.caps, [load], repetitions), avg_file_size, num_files,
                             seed=2 * seed + 1)
        hold = generate_log(cfg, lattice_design(cfg.caps, [load], 1), avg_file_size, num_files,
                            seed=2 * seed + 2)
        train = [r for r in train if not r.dst_endpoint.endswith("-bg")]
        hold = [(r.theta, r.throughput) for r in hold if not r.dst_endpoint.endswith("-bg")]
        samples = [(r.theta, r.throughput) for r in train]
        fam = fit_family(accumulate(samples))
        models = {"spline": fam, "cubic": fit_regression(samples, 3), "quadratic": fit_regression(samples, 2)}
        for name, model in models.items():
            rows.append({"seed": seed, "model": name, "accuracy_pct": surface_accuracy(model, hold)})
    summary = [{"model": m, "accuracy_pct": _mean(r["accuracy_pct"] for r in rows if r["model"] == m)}
               for m in ("spline", "cubic", "quadratic")]
    return SuiteResult("surface", {"surface_accuracy.csv": summary, "surface_runs.csv": rows},
                       {s["model"]: s["accuracy_pct"] for s in summary})


# ----------------------------------------------------------------- retune

def retune_suite(seeds: Sequence[int] = range(20), before: float = 0.2, after: float = 0.6) -> SuiteResult:
    """Load steps from ``before`` to ``after`` halfway through the expected transfer time."""
    f, n = DATASET_CLASSES["large"]
    kb = training_kb(STANDARD, f, n)
    _, opt_before = optimum(STANDARD, before, f)
    theta_after, opt_after = optimum(STANDARD, after, f)
    t_step = 0.5 * f * n * 8 / (opt_before * 1e6)
    rows = []
    for seed in seeds:
        cfg = replace(STANDARD, seed=seed, load_timeline=((0.0, before), (t_step, after)))
        rep = single_run("asm", cfg, kb, f, n)
        post = rep.phases[1:]
        nbytes = sum(p.nbytes for p in post)
        elapsed = sum(p.elapsed for p in post)
        post_th = nbytes * 8 / (elapsed * 1e6) if elapsed > 0 else 0.0
        rows.append({"seed": seed, "retunes": rep.retunes, "post_retune_mbps": post_th,
                     "optimum_after_mbps": opt_after, "ratio": post_th / opt_after,
                     "throughput_mbps": rep.mean_throughput})
    metrics = {"min_retunes": min(r["retunes"] for r in rows), "min_ratio": min(r["ratio"] for r in rows),
               "mean_ratio": _mean(r["ratio"] for r in rows)}
    return SuiteResult("retune", {"retune.csv": rows}, metrics)


SUITES: dict[str, Callable[..., SuiteResult]] = {
    "throughput": throughput_suite,
    "convergence": convergence_suite,
    "fairness": fairness_suite,
    "staleness": staleness_suite,
    "surface": surface_suite,
    "retune": retune_suite,
}
