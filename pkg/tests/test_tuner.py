import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xfertune.errors import ConstraintError
from xfertune.evaluation import STANDARD, request_for, training_kb
from xfertune.knowledge import ClusterKey, ClusterKnowledge, SamplingRegion, SurfaceEntry, find_maxima
from xfertune.netsim import SimConfig, SimNetwork, mean_throughput, optimum
from xfertune.surface import ConfidenceModel, family_from_grids
from xfertune.translog import Caps, ParameterPoint as P, TransferRequest
from xfertune.tuner import (
    Committed,
    Keep,
    Phase,
    Switch,
    TransferReport,
    TunerConfig,
    accuracy,
    accuracy_pct,
    baseline_additive,
    baseline_static,
    first_probe,
    init_state,
    monitor,
    plan_chunks,
    run_transfer,
    split_remainder,
    step,
)

TINY = Caps(2, 4, 1)


def flat_surface(value, intensity, sigma=10.0):
    fam = family_from_grids([1, 2], [1, 2], {1: np.full((2, 2), float(value))})
    pts = TINY.lattice()
    conf = ConfidenceModel({t: float(value) for t in pts}, {t: sigma for t in pts}, {t: 3 for t in pts}, sigma, 1.96)
    return SurfaceEntry(intensity, fam, conf, {}, find_maxima(fam, TINY))


def knowledge(values):
    """Surfaces ordered from idle (highest throughput) to busiest."""
    n = len(values)
    surfaces = [flat_surface(v, 1.0 - k / n) for k, v in enumerate(values)]
    return ClusterKnowledge(ClusterKey.from_centroid((40, 1000, 8, 2)), surfaces, SamplingRegion([], []), 0)


def five():
    return knowledge([1000, 900, 800, 700, 600])


def handle(config, agent="agent0", size=1e8):
    return SimNetwork(config).register(agent, size)


class TestChunks:
    def test_uniform_dataset(self):
        req = TransferRequest("a", "b", 40, 1000, (10,) * 100)
        plan = plan_chunks(req)
        assert [len(c) for c in plan.sample_chunks] == [5, 5, 5]
        assert len(plan.remainder) == 85
        assert plan.sample_chunks[0] == (0, 1, 2, 3, 4)

    def test_two_files(self):
        plan = plan_chunks(TransferRequest("a", "b", 40, 1000, (10, 10)))
        assert plan.sample_chunks == ((0,), (1,)) and plan.remainder == ()

    def oracle(self, sizes, target):
        # smallest prefix length minimising |prefix sum - target|
        sums = np.cumsum(sizes)
        return int(np.argmin(np.abs(sums - target))) + 1

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(1, 10_000), min_size=1, max_size=40), st.floats(0.01, 0.5))
    def test_greedy_matches_prefix_oracle(self, sizes, frac):
        req = TransferRequest("a", "b", 40, 1000, tuple(sizes))
        plan = plan_chunks(req, frac, 3)
        target = max(frac * sum(sizes), 1)
        rest = list(range(len(sizes)))
        for chunk in plan.sample_chunks:
            k = self.oracle([sizes[i] for i in rest], target)
            assert list(chunk) == rest[:k]
            rest = rest[k:]
        assert list(plan.remainder) == rest
        flat = [i for c in plan.sample_chunks for i in c] + list(plan.remainder)
        assert flat == list(range(len(sizes)))

    def test_split_remainder_covers_everything(self):
        sizes = tuple(range(1, 51))
        plan = plan_chunks(TransferRequest("a", "b", 40, 1000, sizes))
        pieces = split_remainder(plan, 0.05, sum(sizes))
        assert [i for c in pieces for i in c] == list(plan.remainder)


class TestStep:
    def test_first_probe_is_middle(self):
        assert first_probe(five())[2] == 2
        assert first_probe(knowledge([4, 3, 2, 1]))[2] == 1
        assert first_probe(knowledge([1]))[2] == 0

    def test_in_band_commits(self):
        s = init_state(five())
        assert step(s, 805.0) == Committed(2, P(1, 1, 1))
        assert s.committed and not s.degraded
        with pytest.raises(ValueError):
            step(s, 800.0)

    def test_streak_keeps(self):
        s = init_state(five(), TunerConfig(convergence_streak=2))
        assert step(s, 800.0) == Keep()
        assert isinstance(step(s, 801.0), Committed)

    def test_above_band_moves_to_lighter_load(self):
        s = init_state(five())
        assert step(s, 1000.0) == Switch(0, P(1, 1, 1))
        assert (s.lo, s.hi) == (0, 1)

    def test_below_band_moves_to_heavier_load(self):
        s = init_state(five())
        assert step(s, 690.0) == Switch(3, P(1, 1, 1))
        assert (s.lo, s.hi) == (3, 4)

    def test_inverted_convention(self):
        ck = knowledge([1000, 900, 800, 700, 600])
        s = init_state(ck, invert_intensity=True)
        # with inverted intensities the lighter surfaces sit at the high indices
        assert isinstance(step(s, 1000.0), Switch) and s.active == 3

    def test_window_exhausted_commits_degraded(self):
        s = init_state(knowledge([1000, 900]))
        # middle of two is index 0; above band with nothing lighter
        assert step(s, 2000.0) == Committed(0, P(1, 1, 1), degraded=True)
        s = init_state(knowledge([1000]))
        assert step(s, 10.0) == Committed(0, P(1, 1, 1), degraded=True)
        assert s.degraded

    def test_degraded_picks_closest_over_all(self):
        s = init_state(knowledge([1000, 900, 800]))
        step(s, 700.0)  # -> index 2, window [2, 2]
        decision = step(s, 1000.0)
        assert decision == Committed(0, P(1, 1, 1), degraded=True)

    def test_budget_commits_on_switch_target(self):
        s = init_state(five(), TunerConfig(max_samples=1))
        assert step(s, 1000.0) == Committed(0, P(1, 1, 1))
        assert s.samples_used == 1 and s.switches == 1

    def test_eight_surface_window(self):
        s = init_state(knowledge([1000 - 50 * k for k in range(8)]))
        assert s.active == 3
        step(s, 2000.0)
        assert (s.lo, s.hi) == (0, 2) and s.active == 0
        step(s, 400.0)
        assert (s.lo, s.hi) == (1, 2)

    def test_z_override(self):
        s = init_state(five(), TunerConfig(z=0.5))
        assert s.band() == (795.0, 805.0)
        assert isinstance(step(s, 810.0), Switch)

    @settings(max_examples=200, deadline=None)
    @given(st.sampled_from([2, 4, 8]), st.lists(st.floats(0, 2000), min_size=20, max_size=20))
    def test_halving_and_termination(self, n, readings):
        s = init_state(knowledge([1000 - 100 * k for k in range(n)]), TunerConfig(max_samples=100))
        bound = math.ceil(math.log2(n)) + 1
        width = s.window
        for k, th in enumerate(readings):
            d = step(s, th)
            if isinstance(d, Committed):
                break
            if isinstance(d, Switch):
                assert s.window <= math.ceil(width / 2)
                assert s.lo <= s.active <= s.hi
                width = s.window
        assert s.committed and s.samples_used <= bound


class TestMonitor:
    def test_examples(self):
        band = (90.0, 110.0)
        assert monitor([80, 85, 70], band) == "Deviated"
        assert monitor([120, 130, 111], band) == "Deviated"
        assert monitor([80, 120, 70], band) == "Stable"
        assert monitor([80, 100, 70], band) == "Stable"
        assert monitor([90, 110, 100], band) == "Stable"
        assert monitor([], band) == "Stable"


class TestAccuracy:
    def test_examples(self):
        assert accuracy_pct(930, 1000) == pytest.approx(93.0)
        assert accuracy_pct(1000, 1000) == 100.0
        assert accuracy_pct(2000, 1000) == 0.0
        assert accuracy_pct(3000, 1000) == 0.0
        with pytest.raises(ValueError):
            accuracy_pct(1, 0)

    def test_byte_weighted(self):
        rep = TransferReport("asm", 0, 0)
        # 900 Mbps vs 1000 predicted on 3/4 of the bytes, exact on the rest
        rep.phases = [Phase(0, (1, 1, 1), 1000.0, 3_000_000, 3_000_000 * 8 / 900e6),
                      Phase(1, (1, 1, 1), 500.0, 1_000_000, 1_000_000 * 8 / 500e6)]
        assert accuracy(rep) == pytest.approx(100 - 7.5)

    def test_no_phases(self):
        assert accuracy(TransferReport("asm", 0, 0)) is None


class TestBaselines:
    def test_static_matches_closed_form(self):
        cfg = SimConfig(rtt=10.0, noise_sigma=0.0)
        req = TransferRequest.uniform("siteA", "siteB", 10.0, 1000.0, 10**9, 10)
        rep = baseline_static(req, P(2, 2, 1), handle(cfg, size=1e9))
        assert rep.chunks[0].achieved == pytest.approx(400 / 1.00125, rel=1e-12)
        assert rep.mean_throughput == pytest.approx(mean_throughput(cfg, P(2, 2, 1), 0.0, 0, 1e9))

    def test_static_rejects_over_caps(self):
        req = TransferRequest.uniform("siteA", "siteB", 40.0, 1000.0, 10**6, 10)
        with pytest.raises(ConstraintError):
            baseline_static(req, P(8, 8, 1), handle(STANDARD))

    def test_additive_holds_when_flat(self):
        # knee 0: throughput independent of streams, pp gains < 1% on large files
        cfg = SimConfig(knee=0.0, noise_sigma=0.0)
        req = TransferRequest.uniform("siteA", "siteB", 40.0, 1000.0, 10**9, 40)
        rep = baseline_additive(req, handle(cfg, size=1e9))
        assert rep.committed_theta == (1, 1, 1) and rep.convergence_steps == 1
        assert [c.decision for c in rep.chunks[:3]] == ["step", "backoff", "hold"]

    def test_additive_climbs_the_knee(self):
        cfg = SimConfig(noise_sigma=0.0)
        req = TransferRequest.uniform("siteA", "siteB", 40.0, 1000.0, 10**9, 40)
        rep = baseline_additive(req, handle(cfg, size=1e9))
        cc, p, pp = rep.committed_theta
        assert cc * p >= 25
        static = baseline_static(req, P(1, 1, 1), handle(cfg, size=1e9))
        assert rep.mean_throughput > 2 * static.mean_throughput


@pytest.fixture(scope="module")
def kb():
    return training_kb()


class TestSession:
    @pytest.mark.parametrize("load", [0.0, 0.2, 0.4, 0.6])
    def test_stationary_load_converges(self, kb, load):
        cfg = STANDARD.with_load(load)
        req = request_for(cfg, 10**8, 200)
        rep = run_transfer(req, kb, handle(replace(cfg, seed=3)))
        assert rep.complete and rep.samples_used <= 3
        assert rep.bytes_done == req.total_size
        assert accuracy(rep) >= 90
        _, best = optimum(cfg, load, 1e8)
        assert rep.mean_throughput >= 0.85 * best

    def test_asm_needs_fewer_probes_than_additive_periods(self, kb):
        cfg = STANDARD.with_load(0.2)
        req = request_for(cfg, 10**8, 200)
        asm = run_transfer(req, kb, handle(cfg))
        add = baseline_additive(req, handle(cfg))
        assert asm.samples_used < add.convergence_steps

    def test_deterministic(self, kb):
        cfg = replace(STANDARD.with_load(0.4), seed=11)
        req = request_for(cfg, 10**8, 200)
        a = run_transfer(req, kb, handle(cfg)).to_json()
        b = run_transfer(req, kb, handle(cfg)).to_json()
        assert a == b

    def test_probes_use_whole_dataset(self, kb):
        cfg = STANDARD.with_load(0.6)
        req = request_for(cfg, 10**8, 2)
        rep = run_transfer(req, kb, handle(cfg))
        assert rep.complete and rep.bytes_done == req.total_size
        assert rep.phases == [] and accuracy(rep) is None

    def test_outage_gives_incomplete_report(self, kb):
        cfg = SimConfig(outage_at=5.0)
        req = request_for(cfg, 10**8, 200)
        rep = run_transfer(req, kb, handle(cfg))
        assert not rep.complete and "outage" in rep.error
        assert rep.bytes_done < req.total_size

    def test_report_json(self, kb):
        cfg = STANDARD.with_load(0.2)
        rep = run_transfer(request_for(cfg, 10**8, 200), kb, handle(cfg))
        doc = json.loads(rep.to_json())
        assert doc["version"] == "1" and doc["tuner"] == "asm"
        assert doc["accuracy_pct"] == pytest.approx(100 - doc["relative_error_pct"])
        assert doc["bytes_transferred"] == doc["total_bytes"]
