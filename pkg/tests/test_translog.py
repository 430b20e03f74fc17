import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xfertune.errors import ConstraintError, KBFormatError, KBVersionError, SchemaError
from xfertune.netsim import SimConfig, generate_log, lattice_design
from xfertune.translog import (
    LOG_COLUMNS,
    Caps,
    KnowledgeBase,
    ParameterPoint,
    TransferRecord,
    TransferRequest,
    emit_log,
    load_kb,
    parse_log,
    save_kb,
)


def make_record(**over):
    base = dict(id="r1", src_endpoint="a", dst_endpoint="b", start_time=0.0, end_time=10.0, rtt=40.0,
                bandwidth=1000.0, avg_file_size=1e6, num_files=10, total_size=10_000_000,
                cc=2, p=2, pp=1, throughput=500.0)
    base.update(over)
    return TransferRecord(**base)


def write_rows(path, rows, header=LOG_COLUMNS):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def row(**over):
    rec = dict(id="x", src="a", dst="b", start_time=0, end_time=5, rtt_ms=40, bandwidth_mbps=1000,
               avg_file_size_bytes=1000, num_files=2, total_size_bytes=2000, cc=1, p=1, pp=1,
               throughput_mbps=10)
    rec.update(over)
    return [rec[c] for c in LOG_COLUMNS]


class TestTypes:
    def test_caps_check(self):
        caps = Caps(beta=8, max_streams=32, max_pipelining=8)
        caps.check(ParameterPoint(4, 8, 8))
        with pytest.raises(ConstraintError, match="max_streams"):
            caps.check(ParameterPoint(8, 5, 1))
        with pytest.raises(ConstraintError):
            caps.check(ParameterPoint(0, 1, 1))
        assert not caps.feasible(ParameterPoint(1, 1, 9))

    def test_lattice_sorted_and_feasible(self):
        caps = Caps(4, 6, 3)
        pts = caps.lattice()
        assert pts == sorted(pts)
        assert all(caps.feasible(t) for t in pts)
        brute = [ParameterPoint(a, b, c) for a in range(1, 5) for b in range(1, 5) for c in range(1, 5)
                 if caps.feasible(ParameterPoint(a, b, c))]
        assert pts == brute

    @pytest.mark.parametrize("over, reason", [
        (dict(throughput=1500.0), "throughput exceeds capacity"),
        (dict(end_time=0.0), "end_time"),
        (dict(throughput=-1.0), "negative"),
        (dict(cc=0), ">= 1"),
        (dict(num_files=0), "num_files"),
        (dict(total_size=100), "inconsistent"),
    ])
    def test_record_invariants(self, over, reason):
        with pytest.raises(ValueError, match=reason):
            make_record(**over)

    def test_total_size_tolerance(self):
        # 40% off is still accepted
        make_record(total_size=14_000_000)

    def test_request_fills_stats(self):
        req = TransferRequest("a", "b", 40, 1000, (100, 300))
        assert req.num_files == 2 and req.avg_file_size == 200 and req.total_size == 400
        with pytest.raises(ValueError):
            TransferRequest("a", "b", 40, 1000, ())


class TestLogIO:
    def test_three_valid_rows(self, tmp_path):
        path = tmp_path / "log.csv"
        write_rows(path, [row(id=i) for i in range(3)])
        res = parse_log(path)
        assert len(res.records) == 3 and res.rejects == []
        assert [r.id for r in res.records] == ["0", "1", "2"]

    def test_rejects_keep_order_and_reason(self, tmp_path):
        path = tmp_path / "log.csv"
        write_rows(path, [row(id="ok1"), row(id="bad", throughput_mbps=2000), row(id="ok2"),
                          row(id="nan", cc="x")])
        res = parse_log(path)
        assert [r.id for r in res.records] == ["ok1", "ok2"]
        assert res.rejects[0].line == 3
        assert res.rejects[0].reason == "throughput exceeds capacity"
        assert res.rejects[1].line == 5

    def test_missing_column(self, tmp_path):
        path = tmp_path / "log.csv"
        header = [c for c in LOG_COLUMNS if c != "pp"]
        write_rows(path, [], header)
        with pytest.raises(SchemaError, match="pp"):
            parse_log(path)

    def test_schema_mapping(self, tmp_path):
        path = tmp_path / "log.csv"
        header = ["RTT" if c == "rtt_ms" else c for c in LOG_COLUMNS]
        write_rows(path, [row()], header)
        assert len(parse_log(path, {"rtt_ms": "RTT"}).records) == 1

    def test_empty_emit_is_header_only(self, tmp_path):
        path = tmp_path / "log.csv"
        emit_log([], path)
        assert path.read_text() == ",".join(LOG_COLUMNS) + "\n"
        emit_log([make_record()], path)
        assert len(path.read_text().splitlines()) == 2

    def test_simulated_round_trip(self, tmp_path):
        design = lattice_design(Caps(4, 8, 4), [0.0, 0.3], 1)
        recs = generate_log(SimConfig(), design, 1e8, 20)[:500]
        path = tmp_path / "sim.csv"
        emit_log(recs, path)
        res = parse_log(path)
        assert res.records == recs and not res.rejects

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 1e9, allow_nan=False), st.floats(1e-6, 1e5), st.floats(0, 1000),
           st.floats(1, 1e10), st.integers(1, 10**6))
    def test_float_round_trip(self, tmp_path_factory, start, dur, th, avg, n):
        rec = make_record(start_time=start, end_time=start + dur, throughput=th, avg_file_size=avg,
                          num_files=n, total_size=max(1, int(round(avg * n))))
        path = tmp_path_factory.mktemp("rt") / "one.csv"
        emit_log([rec], path)
        assert parse_log(path).records == [rec]


class TestKBFile:
    def test_empty_kb_document(self, tmp_path):
        path = tmp_path / "kb.json"
        save_kb(KnowledgeBase(config_fingerprint="abc"), path)
        doc = json.loads(path.read_text())
        assert doc["version"] == "1" and doc["entries"] == [] and doc["config_fingerprint"] == "abc"
        kb = load_kb(path)
        assert kb.entries == {} and kb.config_fingerprint == "abc"

    def test_version_mismatch_names_both(self, tmp_path):
        path = tmp_path / "kb.json"
        path.write_text(json.dumps({"version": "7", "config_fingerprint": "", "entries": []}))
        with pytest.raises(KBVersionError, match="'7'.*'1'"):
            load_kb(path)

    def test_fingerprint_mismatch(self, tmp_path):
        path = tmp_path / "kb.json"
        save_kb(KnowledgeBase(config_fingerprint="aaaa"), path)
        with pytest.raises(KBVersionError, match="bbbb"):
            load_kb(path, expected_fingerprint="bbbb")

    def test_truncated_reports_offset(self, tmp_path):
        path = tmp_path / "kb.json"
        save_kb(KnowledgeBase(config_fingerprint="aaaa"), path)
        text = path.read_text()
        path.write_text(text[:25])
        with pytest.raises(KBFormatError) as info:
            load_kb(path)
        assert info.value.offset is not None and info.value.offset <= 25
        assert "byte" in str(info.value)
