"""JSON scenario files: simulated link, training-log design, transfer request, agents.

Example::

    {
      "network": {"bandwidth": 1000, "rtt": 40, "seed": 3,
                  "load_timeline": [[0, 0.2], [600, 0.6]]},
      "log": {"loads": [0, 0.2, 0.4, 0.6], "repetitions": 3,
              "datasets": [{"avg_file_size": 100000000, "num_files": 200}]},
      "request": {"file_size": 100000000, "num_files": 200},
      "theta": [1, 1, 1]
    }

``request`` may instead list explicit sizes under ``files``. ``agents`` is
an optional list of ``{"id", "tuner", "request"}`` objects run concurrently
on the same link.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .netsim import DesignCell, SimConfig, generate_log, lattice_design
from .translog import ParameterPoint, TransferRecord, TransferRequest

_NETWORK_FIELDS = {f.name for f in fields(SimConfig)}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class AgentSpec:
    agent_id: str
    tuner: str
    request: TransferRequest


@dataclass
class Scenario:
    network: SimConfig
    loads: tuple = (0.0,)
    repetitions: int = 1
    datasets: tuple = ()
    cells: tuple = ()
    start_time: float = 1.7e9
    request: TransferRequest | None = None
    theta: ParameterPoint = ParameterPoint(1, 1, 1)
    agents: list = field(default_factory=list)

    def design(self) -> list[DesignCell]:
        if self.cells:
            return list(self.cells)
        return lattice_design(self.network.caps, self.loads, self.repetitions)

    def generate(self, seed: int | None = None) -> list[TransferRecord]:
        """Training log covering every dataset, one after another in time."""
        if not self.datasets:
            raise ScenarioError("scenario has no log datasets")
        net = self.network if seed is None else replace(self.network, seed=seed)
        records: list[TransferRecord] = []
        start = self.start_time
        for k, (avg, n) in enumerate(self.datasets):
            part = generate_log(replace(net, seed=net.seed + k), self.design(), avg, n,
                                start_time=start, id_prefix=f"d{k}-")
            records.extend(part)
            start = max(r.end_time for r in part) + 1.0
        return records


def _request(doc: Mapping[str, Any], net: SimConfig) -> TransferRequest:
    src = doc.get("src_endpoint", net.src_endpoint)
    dst = doc.get("dst_endpoint", net.dst_endpoint)
    if "files" in doc:
        files = tuple(int(s) for s in doc["files"])
        if not files or min(files) <= 0:
            raise ScenarioError("request.files must be a nonempty list of positive sizes")
        return TransferRequest(src, dst, net.rtt, net.bandwidth, files)
    try:
        size, count = int(doc["file_size"]), int(doc["num_files"])
    except KeyError as exc:
        raise ScenarioError(f"request needs 'files' or 'file_size' and 'num_files' (missing {exc})") from None
    if size <= 0 or count <= 0:
        raise ScenarioError("request file_size and num_files must be positive")
    return TransferRequest.uniform(src, dst, net.rtt, net.bandwidth, size, count)


def _theta(value) -> ParameterPoint:
    try:
        cc, p, pp = (int(v) for v in value)
    except (TypeError, ValueError):
        raise ScenarioError(f"theta must be three integers [cc, p, pp], got {value!r}") from None
    return ParameterPoint(cc, p, pp)


def scenario_from_dict(doc: Mapping[str, Any]) -> Scenario:
    if not isinstance(doc, Mapping):
        raise ScenarioError("scenario must be a JSON object")
    net_doc = dict(doc.get("network", {}))
    unknown = set(net_doc) - _NETWORK_FIELDS
    if unknown:
        raise ScenarioError(f"unknown network fields: {', '.join(sorted(unknown))}")
    if "load_timeline" in net_doc:
        try:
            net_doc["load_timeline"] = tuple((float(t), float(l)) for t, l in net_doc["load_timeline"])
        except (TypeError, ValueError):
            raise ScenarioError("load_timeline must be a list of [time, load] pairs") from None
    try:
        net = SimConfig(**net_doc)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"bad network section: {exc}") from None

    log_doc = doc.get("log", {})
    loads = tuple(float(x) for x in log_doc.get("loads", (0.0,)))
    reps = int(log_doc.get("repetitions", 1))
    if reps < 1:
        raise ScenarioError("log.repetitions must be >= 1")
    datasets = []
    for d in log_doc.get("datasets", []):
        try:
            avg, n = float(d["avg_file_size"]), int(d["num_files"])
        except (KeyError, TypeError, ValueError):
            raise ScenarioError("each log dataset needs avg_file_size and num_files") from None
        if avg <= 0 or n <= 0:
            raise ScenarioError("log dataset sizes must be positive")
        datasets.append((avg, n))
    cells = []
    for c in log_doc.get("cells", []):
        try:
            cc, p, pp, load, r = c
        except (TypeError, ValueError):
            raise ScenarioError("log cells are [cc, p, pp, load, repetitions]") from None
        theta = ParameterPoint(int(cc), int(p), int(pp))
        if not net.caps.feasible(theta):
            raise ScenarioError(f"log cell {theta} violates caps: {', '.join(net.caps.violations(theta))}")
        cells.append(DesignCell(theta, float(load), int(r)))
    for load in loads + tuple(c.load for c in cells):
        if not 0.0 <= load < 1.0:
            raise ScenarioError(f"log load {load} must be in [0, 1)")

    request = _request(doc["request"], net) if "request" in doc else None
    agents = []
    for k, a in enumerate(doc.get("agents", [])):
        if "request" not in a:
            raise ScenarioError(f"agent {k} has no request")
        agents.append(AgentSpec(str(a.get("id", f"agent{k}")), str(a.get("tuner", "asm")), _request(a["request"], net)))
    if len({a.agent_id for a in agents}) != len(agents):
        raise ScenarioError("agent ids must be unique")
    theta = _theta(doc["theta"]) if "theta" in doc else ParameterPoint(1, 1, 1)
    return Scenario(net, loads, reps, tuple(datasets), tuple(cells), float(log_doc.get("start_time", 1.7e9)),
                    request, theta, agents)


def load_scenario(path: str | Path) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario {path} is not valid JSON: {exc}") from None
    return scenario_from_dict(doc)
