import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qosmc import radio
from qosmc.channel import NotReadyError, Position
from qosmc.config import LoadConfig, TrafficConfig
from qosmc.selector import ClusterAssignment, ClusterMember
from qosmc.sim import (
    MAX_ATTEMPTS, TB_LOST, TB_OK, TB_OPEN, HarqProcess, MemberStats, RunMetrics, Simulation, aggregate_repetitions,
    collect_metrics, harq_step, latency_score, make_policy, packet_outcomes, residual_loss, run_scenario,
    step_background_load,
)


def fixed_policy(gnb_id=1, mcs=20, rbs=20, name="fixed"):
    """Always serve from one gNB with a fixed grant."""
    def policy(snaps, ue):
        return ClusterAssignment([ClusterMember(gnb_id, mcs, 1.0, rbs=rbs)], True, name), None
    policy.__name__ = name
    return policy


# --- HARQ ---------------------------------------------------------------------

def test_harq_decodes_on_first_attempt():
    p = harq_step(HarqProcess(1, 3), True)
    assert p.state == "decoded" and p.attempts == 1
    assert p.latency == pytest.approx(radio.min_latency(3), rel=1e-12)


def test_harq_gives_up_after_four_attempts():
    p = HarqProcess(1, 0)
    for _ in range(3):
        harq_step(p, False)
        assert p.state == "pending"
    harq_step(p, False)
    assert p.state == "lost" and p.attempts == MAX_ATTEMPTS
    assert p.latency == pytest.approx(radio.max_latency(0), rel=1e-12)
    with pytest.raises(ValueError):
        harq_step(p, True)


@pytest.mark.parametrize("mu", [0, 1, 2, 3])
def test_harq_latency_within_bracket(mu):
    for fails in range(4):
        p = HarqProcess(0, mu)
        for _ in range(fails):
            harq_step(p, False)
        harq_step(p, True)
        assert radio.min_latency(mu) <= p.latency <= radio.max_latency(mu)


def test_residual_loss():
    assert residual_loss(0.1) == pytest.approx(1e-4, rel=1e-12)
    with pytest.raises(ValueError):
        residual_loss(1.1)


# --- background load ----------------------------------------------------------

@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_background_load_stays_bounded(seed):
    rng = np.random.default_rng(seed)
    occ = rng.integers(0, 41, 9)
    for _ in range(200):
        nxt = step_background_load(occ, rng, 5, 40)
        assert np.all((nxt >= 0) & (nxt <= 40))
        assert np.all(np.abs(nxt - occ) <= 5)
        occ = nxt


def test_background_load_zero_step_is_frozen(rng):
    occ = np.array([3, 7])
    assert step_background_load(occ, rng, 0, 40).tolist() == [3, 7]


# --- packet accounting ------------------------------------------------------------

def _brute_packets(tbs, packet):
    """Bit-by-bit reference for packet_outcomes."""
    end = max(e for _, e, _, _ in tbs)
    owner = {}
    for idx, (s, e, _, _) in enumerate(tbs):
        for b in range(s, e):
            owner[b] = idx
    sent = got = 0
    lat_sum = 0.0
    for k in range(end // packet):
        carriers = {owner[b] for b in range(k * packet, (k + 1) * packet)}
        states = [tbs[i][2] for i in carriers]
        if TB_LOST in states:
            sent += 1
        elif TB_OPEN not in states:
            sent += 1
            got += 1
            lat_sum += max(tbs[i][3] for i in carriers)
    return sent, got, lat_sum


@settings(max_examples=300)
@given(st.lists(st.tuples(st.integers(1, 40), st.sampled_from([TB_LOST, TB_OK, TB_OPEN]),
                          st.sampled_from([0.25e-3, 0.5e-3, 0.75e-3, 1e-3])), min_size=1, max_size=25),
       st.integers(1, 30), st.randoms(use_true_random=False))
def test_packet_outcomes_match_bitwise_reference(blocks, packet, shuffle):
    tbs, cursor = [], 0
    for size, state, lat in blocks:
        tbs.append((cursor, cursor + size, state, lat))
        cursor += size
    expected = _brute_packets(tbs, packet)
    shuffle.shuffle(tbs)  # input order must not matter
    s, e, st_, la = zip(*tbs)
    sent, got, lat_sum = packet_outcomes(s, e, st_, la, packet)
    assert (sent, got) == expected[:2]
    assert lat_sum == pytest.approx(expected[2], rel=1e-12, abs=1e-15)


def test_packet_outcomes_rejects_gaps():
    with pytest.raises(ValueError):
        packet_outcomes([0, 20], [10, 30], [TB_OK, TB_OK], [0, 0], 5)
    assert packet_outcomes([], [], [], [], 8) == (0, 0, 0.0)


# --- metrics ------------------------------------------------------------------

def test_collect_metrics_weights_by_delivered_bits():
    a = MemberStats(delivered_bits=3e8, packets_sent=100, packets_delivered=99, latency_sum=99 * 0.25e-3)
    b = MemberStats(delivered_bits=1e8, packets_sent=100, packets_delivered=90, latency_sum=90 * 1e-3)
    m = collect_metrics([a, b], 2.0, 2.0 * 50e6, 150e6, 0.99, 0.4e-3)
    assert m.avg_rate == pytest.approx(2e8, rel=1e-12)
    assert m.reliability == pytest.approx(0.75 * 0.99 + 0.25 * 0.90, rel=1e-12)
    assert m.avg_latency == pytest.approx(0.75 * 0.25e-3 + 0.25 * 1e-3, rel=1e-12)
    assert m.resource_hz == pytest.approx(50e6, rel=1e-12)
    assert m.spectrum_efficiency == pytest.approx(4.0, rel=1e-12)
    assert m.qos_rate_score == 1.0
    assert m.qos_lat_score == pytest.approx(0.4e-3 / m.avg_latency, rel=1e-12)
    assert m.qos_rel_score == pytest.approx(m.reliability / 0.99, rel=1e-12)


def test_collect_metrics_nothing_delivered():
    m = collect_metrics([MemberStats(0.0, 10, 0, 0.0)], 1.0, 0.0, 150e6, 0.99, 0.4e-3)
    assert m.avg_rate == 0 and math.isinf(m.avg_latency) and m.qos_lat_score == 0
    assert m.reliability == 0 and m.spectrum_efficiency == 0 and not m.qos_met
    assert latency_score(0.2e-3, 0.4e-3) == 1.0 and latency_score(0.8e-3, 0.4e-3) == 0.5


def test_aggregate_repetitions():
    def rm(rate):
        return RunMetrics(rate, 3e-4, 0.995, 3e7, rate / 3e7, 1.0, 1.0, 1.0)
    agg = aggregate_repetitions([rm(1.0), rm(3.0)])
    assert agg["avg_rate"]["mean"] == 2.0
    assert agg["avg_rate"]["std"] == pytest.approx(math.sqrt(2), rel=1e-12)
    assert aggregate_repetitions([rm(5.0)])["avg_rate"]["std"] == 0.0
    assert agg["qos_success_rate"]["mean"] == 1.0
    with pytest.raises(ValueError):
        aggregate_repetitions([])


# --- engine -------------------------------------------------------------------

def test_error_free_link_delivers_everything(fast_scenario):
    cfg = replace(fast_scenario, duration_s=1.0)
    sim = Simulation(cfg, fixed_policy(1, 20, 20), 0, bler_override=0.0, check_invariants=True)
    m = sim.run()
    tbs = radio.tbs_bits(20, 20)
    assert m.avg_rate == pytest.approx(tbs * radio.slot_count(1.0, 3) / 1.0, rel=1e-12)
    assert m.reliability == 1.0
    assert m.avg_latency == pytest.approx(radio.min_latency(3), rel=1e-12)
    assert m.resource_hz == pytest.approx(radio.consumed_bandwidth(20, 3), rel=1e-12)
    assert m.extras["tb_lost"] == 0


def test_dead_link_delivers_nothing(fast_scenario):
    cfg = replace(fast_scenario, duration_s=0.5)
    m = Simulation(cfg, fixed_policy(), 0, bler_override=1.0).run()
    assert m.avg_rate == 0 and m.reliability == 0 and math.isinf(m.avg_latency) and m.qos_lat_score == 0


@pytest.mark.parametrize("model", ["full_buffer", "cbr"])
def test_conservation_and_bounds_hold_every_slot(fast_scenario, oracle_estimator, model):
    cfg = replace(fast_scenario, duration_s=2.0, traffic=TrafficConfig(model))
    for policy in ("proposed", "snr", "lbmc"):
        sim = Simulation(cfg, policy, 3, estimator=oracle_estimator, check_invariants=True)
        m = sim.run()  # asserts inside the engine
        x = m.extras
        assert x["offered_bits"] == pytest.approx(x["delivered_bits"] + x["lost_bits"] + x["inflight_bits"],
                                                  rel=1e-9)


def test_cbr_delivers_the_offered_rate_when_capacity_allows(fast_scenario):
    cfg = replace(fast_scenario, duration_s=2.0, traffic=TrafficConfig("cbr", offered_rate_factor=0.5))
    m = Simulation(cfg, fixed_policy(1, 27, 66), 0, bler_override=0.0).run()
    assert m.avg_rate == pytest.approx(0.5 * cfg.qos.rate_req, rel=0.01)


def test_tb_latencies_within_bracket(fast_scenario, oracle_estimator):
    cfg = replace(fast_scenario, duration_s=2.0)
    sim = Simulation(cfg, "proposed", 1, estimator=oracle_estimator, record_events=True)
    sim.run()
    assert sim.events
    for ev in sim.events:
        assert radio.min_latency(ev["mu"]) - 1e-15 <= ev["latency_s"] <= radio.max_latency(ev["mu"]) + 1e-15
        assert 1 <= ev["attempts"] <= MAX_ATTEMPTS


@pytest.mark.parametrize("bler", [0.05, 0.1, 0.3])
def test_constant_bler_residual_loss(fast_scenario, bler):
    cfg = replace(fast_scenario, duration_s=5.0)
    m = Simulation(cfg, fixed_policy(1, 10, 10), 0, bler_override=bler).run()
    n = m.extras["tb_resolved"]
    p = bler ** 4
    assert abs(m.extras["tb_lost"] / n - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_engine_is_policy_agnostic(fast_scenario):
    cfg = replace(fast_scenario, duration_s=1.0)
    a = Simulation(cfg, fixed_policy(2, 15, 30, "alpha"), 4, record_events=True)
    b = Simulation(cfg, fixed_policy(2, 15, 30, "beta"), 4, record_events=True)
    ma, mb = a.run(), b.run()
    assert a.events == b.events
    assert ma.values() == mb.values()


def test_policies_see_the_same_channel(fast_scenario, oracle_estimator):
    cfg = replace(fast_scenario, duration_s=1.0)
    seen = {}
    for name in ("proposed", "snr", "lbmc"):
        inner = make_policy(name, cfg, oracle_estimator)
        log = seen.setdefault(name, [])

        def spy(snaps, ue, inner=inner, log=log):
            log.append((tuple(snaps), ue))
            return inner(snaps, ue)
        Simulation(cfg, spy, 8).run()
    assert seen["proposed"] == seen["snr"] == seen["lbmc"]


def test_same_seed_same_result(fast_scenario, oracle_estimator):
    cfg = replace(fast_scenario, duration_s=1.0)
    runs = [run_scenario(cfg, "proposed", 5, estimator=oracle_estimator) for _ in range(2)]
    assert runs[0].values() == runs[1].values() and runs[0].extras == runs[1].extras
    other = run_scenario(cfg, "proposed", 6, estimator=oracle_estimator)
    assert other.values() != runs[0].values()


def test_audit_records(fast_scenario, oracle_estimator):
    cfg = replace(fast_scenario, duration_s=0.5)
    sim = Simulation(cfg, "proposed", 0, estimator=oracle_estimator, audit=True)
    sim.run()
    assert len(sim.audit_log) == 5
    rec = sim.audit_log[0]
    assert {"epoch", "inputs_digest", "score_cards", "members", "cf", "rbs", "feasible"} <= set(rec)
    assert len(rec["score_cards"]) == len(cfg.gnbs)


def test_static_ue_and_frozen_load(fast_scenario):
    cfg = replace(fast_scenario, duration_s=0.5, load=LoadConfig(max_occupied=0, step=0))
    seen = []

    def spy(snaps, ue):
        seen.append((ue, [s.available_rbs for s in snaps]))
        return fixed_policy()(snaps, ue)
    Simulation(cfg, spy, 0, ue_start=Position(250, 250), static_ue=True).run()
    assert all(u == Position(250, 250) and set(av) == {66} for u, av in seen)


def test_policy_errors(fast_scenario, oracle_estimator):
    with pytest.raises(ValueError):
        make_policy("random", fast_scenario, oracle_estimator)
    with pytest.raises(NotReadyError):
        make_policy("proposed", fast_scenario, None)
    with pytest.raises(ValueError):
        Simulation(fast_scenario, fixed_policy(), 0, duration=0.0)
