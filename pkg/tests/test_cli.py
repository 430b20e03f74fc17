import json
from pathlib import Path

import pytest

from xfertune.cli import main
from xfertune.scenario import load_scenario
from xfertune.translog import load_kb, parse_log

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

SMALL = {
    "network": {"bandwidth": 1000, "rtt": 40, "seed": 2, "beta": 4, "max_streams": 16, "max_pipelining": 4,
                "load_timeline": [[0, 0.4]]},
    "log": {"loads": [0, 0.4], "repetitions": 2, "datasets": [{"avg_file_size": 100000000, "num_files": 50}]},
    "request": {"file_size": 100000000, "num_files": 50},
    "theta": [2, 2, 2],
}
CAPS = ["--beta", "4", "--max-streams", "16", "--max-pipelining", "4"]


@pytest.fixture
def scenario(tmp_path):
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(SMALL))
    return path


def write_scenario(tmp_path, name, **over):
    doc = json.loads(json.dumps(SMALL))
    for k, v in over.items():
        doc[k] = v
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def built(tmp_path, scenario):
    log, kb = tmp_path / "log.csv", tmp_path / "kb.json"
    assert main(["simgen", "--scenario", str(scenario), "--out", str(log)]) == 0
    assert main(["offline", "--logs", str(log), "--out", str(kb), *CAPS]) == 0
    return log, kb


def test_simgen_is_deterministic(tmp_path, scenario):
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    for out in (a, b):
        assert main(["simgen", "--scenario", str(scenario), "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert main(["simgen", "--scenario", str(scenario), "--out", str(c), "--seed", "99"]) == 0
    assert a.read_bytes() != c.read_bytes()
    assert len(parse_log(a).records) == 2 * 2 * 64 + 1


def test_offline_summary_and_bytes(tmp_path, built, capsys):
    log, kb = built
    again = tmp_path / "kb2.json"
    assert main(["offline", "--logs", str(log), "--out", str(again), *CAPS]) == 0
    assert kb.read_bytes() == again.read_bytes()
    out = capsys.readouterr().out
    assert "clustering m=" in out and "ch_score=" in out
    assert "intensity=1 max=(cc=" in out and "intensity=0.6 max=" in out


def test_offline_merge(tmp_path, built, capsys):
    log, kb = built
    merged = tmp_path / "merged.json"
    assert main(["offline", "--logs", str(log), "--out", str(merged), "--merge", str(kb), *CAPS]) == 0
    ck = next(iter(load_kb(merged).entries.values()))
    assert ck.n_records == 2 * next(iter(load_kb(kb).entries.values())).n_records
    # different caps give a different fingerprint
    assert main(["offline", "--logs", str(log), "--out", str(merged), "--merge", str(kb)]) == 2
    assert "built under config" in capsys.readouterr().err


def test_offline_rejects_and_empty(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,src\n1,a\n")
    assert main(["offline", "--logs", str(bad), "--out", str(tmp_path / "kb.json")]) == 2
    assert main(["offline", "--logs", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "kb.json")]) == 2


def test_online_report(tmp_path, built, scenario, capsys):
    _, kb = built
    rep_a, rep_b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (rep_a, rep_b):
        assert main(["online", "--kb", str(kb), "--scenario", str(scenario), "--out", str(out)]) == 0
    assert rep_a.read_bytes() == rep_b.read_bytes()
    doc = json.loads(rep_a.read_text())
    assert doc["tuner"] == "asm" and doc["complete"] and doc["samples_used"] <= 3
    assert doc["accuracy_pct"] >= 85
    assert "agent0 asm:" in capsys.readouterr().err


def test_online_stdout_and_baselines(built, scenario, capsys):
    _, kb = built
    capsys.readouterr()
    assert main(["online", "--scenario", str(scenario), "--tuner", "static"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["committed_theta"] == [2, 2, 2]
    assert main(["online", "--scenario", str(scenario), "--tuner", "additive", "--seed", "4"]) == 0
    assert json.loads(capsys.readouterr().out)["tuner"] == "additive"


def test_online_usage_errors(tmp_path, built, scenario, capsys):
    _, kb = built
    assert main(["online", "--scenario", str(scenario)]) == 2
    assert "--kb" in capsys.readouterr().err
    over = write_scenario(tmp_path, "over.json", theta=[8, 8, 1])
    assert main(["online", "--scenario", str(over), "--tuner", "static"]) == 2
    assert main(["online", "--kb", str(kb), "--scenario", str(scenario), "--max-streams", "2"]) == 2
    assert main(["online", "--kb", str(tmp_path / "nope.json"), "--scenario", str(scenario)]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert main(["online", "--kb", str(kb), "--scenario", str(broken)]) == 2
    with pytest.raises(SystemExit):
        main(["online", "--scenario", str(scenario), "--sample-fraction", "2"])


def test_online_outage_exit_code(tmp_path, built):
    _, kb = built
    net = dict(SMALL["network"], outage_at=3.0)
    sc = write_scenario(tmp_path, "outage.json", network=net)
    out = tmp_path / "rep.json"
    assert main(["online", "--kb", str(kb), "--scenario", str(sc), "--out", str(out)]) == 1
    doc = json.loads(out.read_text())
    assert not doc["complete"] and "outage" in doc["error"]


def test_online_agents(tmp_path, built):
    _, kb = built
    req = SMALL["request"]
    sc = write_scenario(tmp_path, "agents.json", agents=[{"id": "x", "tuner": "asm", "request": req},
                                                         {"id": "y", "tuner": "static", "request": req}])
    out = tmp_path / "rep.json"
    assert main(["online", "--kb", str(kb), "--scenario", str(sc), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert sorted(doc["agents"]) == ["x", "y"] and doc["agents"]["y"]["tuner"] == "static"


def test_inspect(built, capsys):
    _, kb = built
    capsys.readouterr()
    assert main(["inspect", "--kb", str(kb)]) == 0
    out = capsys.readouterr().out
    assert "1 clusters" in out and "local_maxima=" in out and "discriminating" in out


def test_eval_writes_csv(tmp_path, capsys):
    assert main(["eval", "retune", "--out", str(tmp_path / "ev"), "--runs", "2"]) == 0
    files = sorted(p.name for p in (tmp_path / "ev").iterdir())
    assert files and all(f.endswith(".csv") for f in files)
    assert "min_ratio" in capsys.readouterr().out
    assert main(["eval", "nonsense", "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("name", ["standard", "loadstep", "shared"])
def test_bundled_scenarios_parse(name):
    sc = load_scenario(SCENARIOS / f"{name}.json")
    assert sc.datasets and (sc.request is not None or sc.agents)
