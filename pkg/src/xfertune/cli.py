"""Command-line entry point.

Exit codes: 0 success, 1 internal error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import ConstraintError, XferTuneError
from .evaluation import SUITES, run_tuner
from .knowledge import OfflineConfig, build_kb, merge_kb
from .netsim import SimNetwork, run_agents
from .scenario import AgentSpec, load_scenario
from .translog import Caps, emit_log, load_kb, parse_log, save_kb
from .tuner import TunerConfig

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2

SUITE_RUNS = {"throughput": 20, "convergence": 50, "fairness": 10, "staleness": 20, "surface": 10, "retune": 20}


class UsageError(Exception):
    pass


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _caps_from(args, base: Caps | None = None) -> Caps:
    base = base or Caps()
    return Caps(
        args.beta if args.beta is not None else base.beta,
        args.max_streams if args.max_streams is not None else base.max_streams,
        args.max_pipelining if args.max_pipelining is not None else base.max_pipelining,
    )


# ---------------------------------------------------------------- commands

def cmd_simgen(args) -> int:
    sc = load_scenario(args.scenario)
    records = sc.generate(args.seed)
    emit_log(records, args.out)
    print(f"wrote {len(records)} rows to {args.out}")
    return EXIT_OK


def cmd_offline(args) -> int:
    result = parse_log(args.logs)
    if result.rejects:
        print(f"warning: {len(result.rejects)} rejected rows (first: line {result.rejects[0].line}: "
              f"{result.rejects[0].reason})", file=sys.stderr)
    if not result.records:
        raise UsageError(f"no valid records in {args.logs}")
    caps = _caps_from(args)
    config = OfflineConfig(
        algorithm=args.algorithm, seed=args.seed or 0, min_samples=args.min_samples,
        invert_intensity=args.invert_intensity, beta=caps.beta, max_streams=caps.max_streams,
        max_pipelining=caps.max_pipelining, z=args.z if args.z is not None else OfflineConfig.z,
    )
    kb = build_kb(result.records, config)
    ch = getattr(kb, "ch_score", math.nan)
    if args.merge:
        prior = load_kb(args.merge, expected_fingerprint=config.fingerprint)
        kb = merge_kb(prior, kb)
        print(f"merged into {args.merge}: {len(prior.entries)} prior clusters")
    save_kb(kb, args.out)
    m = getattr(kb, "n_clusters", len(kb.entries))
    print(f"clustering m={m} ch_score={ch:.6g}; {len(kb.entries)} clusters kept")
    for kid, ck in sorted(kb.entries.items()):
        print(f"  {kid} records={ck.n_records} surfaces={len(ck.surfaces)} region={len(ck.region.points)}")
        for s in ck.surfaces:
            b = s.best
            print(f"    intensity={s.intensity:g} max=(cc={b.cc}, p={b.p}, pp={b.pp}) predicted={s.predicted_max:.1f} Mbps")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_online(args) -> int:
    sc = load_scenario(args.scenario)
    net_cfg = sc.network if args.seed is None else replace(sc.network, seed=args.seed)
    kb = load_kb(args.kb) if args.kb else None
    caps = _caps_from(args, net_cfg.caps)
    tcfg = TunerConfig(sample_fraction=args.sample_fraction, max_samples=args.max_samples,
                       monitor_window=args.monitor_window, z=args.z, caps=caps)
    agents = sc.agents or []
    if not agents:
        if sc.request is None:
            raise UsageError("scenario has no request")
        agents = [AgentSpec("agent0", args.tuner, sc.request)]
    for a in agents:
        if a.tuner == "asm" and kb is None:
            raise UsageError("--kb is required for the asm tuner")
        if a.tuner not in ("asm", "static", "additive"):
            raise UsageError(f"unknown tuner {a.tuner!r}")
    if any(a.tuner == "static" for a in agents):
        for c in (caps, net_cfg.caps):
            c.check(sc.theta)

    def session(agent):
        def run(handle):
            return run_tuner(agent.tuner, agent.request, kb, handle, tcfg, sc.theta)
        return run

    net = SimNetwork(net_cfg)
    reports = run_agents(net, [(a.agent_id, a.request.avg_file_size, session(a)) for a in agents])
    if len(reports) == 1 and not sc.agents:
        text = reports[0].to_json()
    else:
        doc = {"version": "1", "agents": {a.agent_id: r.to_dict() for a, r in zip(agents, reports)}}
        text = json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"
    _write(args.out, text)
    for a, r in zip(agents, reports):
        status = "complete" if r.complete else f"incomplete ({r.error})"
        print(f"{a.agent_id} {r.tuner}: {r.mean_throughput:.1f} Mbps, samples={r.samples_used}, "
              f"retunes={r.retunes}, {status}", file=sys.stderr)
    return EXIT_OK if all(r.complete for r in reports) else EXIT_INTERNAL


def cmd_eval(args) -> int:
    if args.suite not in SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; available: {', '.join(SUITES)}")
    runs = args.runs or SUITE_RUNS[args.suite]
    seed = args.seed or 0
    result = SUITES[args.suite](seeds=range(seed, seed + runs))
    paths = result.write(args.out)
    for p in paths:
        print(f"wrote {p}")
    for k, v in result.metrics.items():
        print(f"{k}: {v}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    kb = load_kb(args.kb)
    print(f"knowledge base {args.kb}: {len(kb.entries)} clusters, fingerprint {kb.config_fingerprint}")
    for kid, ck in sorted(kb.entries.items()):
        print(f"  {kid} records={ck.n_records} surfaces={len(ck.surfaces)}")
        for s in ck.surfaces:
            b = s.best
            local = len(s.maxima.local)
            print(f"    intensity={s.intensity:g} max=(cc={b.cc}, p={b.p}, pp={b.pp}) predicted={s.predicted_max:.1f} "
                  f"local_maxima={local}")
        print(f"    region: {len(ck.region.maxima_neighborhoods)} near maxima, "
              f"{len(ck.region.discrimination_points)} discriminating")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _positive_fraction(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("must be in (0, 1)")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="xfertune", description="History-driven transfer parameter tuning on a simulated link.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="show warnings from the offline build")
    sub = ap.add_subparsers(dest="command", required=True)

    def caps_flags(p):
        p.add_argument("--beta", type=int, help="per-parameter upper bound")
        p.add_argument("--max-streams", type=int, help="cap on cc*p")
        p.add_argument("--max-pipelining", type=int, help="cap on pp")

    p = sub.add_parser("simgen", help="generate a synthetic transfer log from a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simgen)

    p = sub.add_parser("offline", help="build a knowledge base from a log")
    p.add_argument("--logs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--merge", metavar="KB", help="merge the new build into an existing knowledge base")
    p.add_argument("--algorithm", choices=("kmeans", "hac"), default="kmeans")
    p.add_argument("--seed", type=int)
    p.add_argument("--z", type=float)
    p.add_argument("--min-samples", type=int, default=8)
    p.add_argument("--invert-intensity", action="store_true")
    caps_flags(p)
    p.set_defaults(func=cmd_offline)

    p = sub.add_parser("online", help="run a tuner against the simulator")
    p.add_argument("--kb")
    p.add_argument("--scenario", required=True)
    p.add_argument("--tuner", choices=("asm", "static", "additive"), default="asm")
    p.add_argument("--out", default="-")
    p.add_argument("--seed", type=int)
    p.add_argument("--sample-fraction", type=_positive_fraction, default=0.05)
    p.add_argument("--max-samples", type=int, default=3)
    p.add_argument("--monitor-window", type=int, default=3)
    p.add_argument("--z", type=float)
    caps_flags(p)
    p.set_defaults(func=cmd_online)

    p = sub.add_parser("eval", help="run an evaluation suite and write CSV tables")
    p.add_argument("suite")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int, help="number of seeds (suite default otherwise)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="summarize a knowledge base")
    p.add_argument("--kb", required=True)
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, XferTuneError, ConstraintError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # pragma: no cover - last resort
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
