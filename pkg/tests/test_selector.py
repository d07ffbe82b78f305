import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qosmc import radio
from qosmc.bler.estimator import ConstantEstimator, OracleEstimator
from qosmc.bler.oracle import oracle_curve
from qosmc.selector import (
    ClusterMember, GnbSnapshot, NoFeasibleClusterError, QosRequirement, ScoreCard, SelectorConfig,
    allocate_rbs, build_bler_matrix, decide, es_rate_matrix, estimate_rates, estimate_se, overall_score,
    participation_factors, qos_scores, required_rbs, score_cards, se_scores, select_cluster,
)

REQ = QosRequirement()
MB = 1e6


def snap(i, mu=3, avail=66, snr=None, hist=()):
    return GnbSnapshot(i, mu, 0, avail, tuple(hist), 20, None, snr)


def card(i, rate, overall=0.5):
    return ScoreCard(gnb_id=i, max_es_rate=rate, mcs=10, es_se=1.0, bler=0.1, min_latency=2.5e-4,
                     overall=overall)


# --- step 1 -------------------------------------------------------------------

def test_bler_matrix_passthrough_and_bounds():
    snaps = [snap(0, 0, snr=10.0), snap(1, 3, snr=22.0)]
    m = build_bler_matrix(snaps, OracleEstimator(fading=False))
    assert np.array_equal(m[0], oracle_curve(10.0, 0)) and np.array_equal(m[1], oracle_curve(22.0, 3))
    assert np.all(build_bler_matrix(snaps, ConstantEstimator(0.0)) == 0)
    wild = build_bler_matrix(snaps, lambda s: np.linspace(-3, 3, 27))
    assert wild.min() >= 0 and wild.max() <= 1


# --- step 2 -------------------------------------------------------------------

def test_error_free_row_picks_top_mcs():
    rates, mcs = estimate_rates(np.zeros((1, 27)), [snap(0)], 0.1)
    assert mcs[0] == 27
    assert rates[0] == pytest.approx(radio.slot_count(0.1, 3) * radio.tbs_bits(66, 27) / 0.1, rel=1e-12)


def test_all_failing_row_gives_zero_rate_and_lowest_mcs():
    rates, mcs = estimate_rates(np.ones((1, 27)), [snap(0)], 0.1)
    assert rates[0] == 0 and mcs[0] == 1


def test_toy_row_picks_brute_force_argmax():
    bler = np.ones((1, 27))
    bler[0, [4, 9, 14]] = [0.0, 0.2, 0.9]  # MCS 5, 10, 15 usable
    s = snap(0, 2, 40)
    rates, mcs = estimate_rates(bler, [s], 0.1)
    ns = radio.slot_count(0.1, 2)
    brute = {m: (1 - bler[0, m - 1]) * ns * radio.tbs_bits(40, m) / 0.1 for m in range(1, 28)}
    best = max(brute, key=lambda m: (brute[m], -m))
    assert mcs[0] == best == 10
    assert rates[0] == pytest.approx(brute[best], rel=1e-12)


def test_estimate_rates_rejects_nonpositive_interval():
    with pytest.raises(ValueError):
        estimate_rates(np.zeros((1, 27)), [snap(0)], 0.0)


def test_estimate_se():
    s = snap(0, 0, 1)
    cbw = radio.consumed_bandwidth(1, 0)
    assert estimate_se([cbw], [s])[0] == pytest.approx(1.0, rel=1e-12)
    assert estimate_se([0.0], [s])[0] == 0
    assert estimate_se([0.0], [snap(0, 0, 0)])[0] == 0
    # composition with the radio formulas
    bler = np.full((1, 27), 0.1)
    s = snap(0, 2, 30)
    rate, _ = estimate_rates(bler, [s], 0.1)
    assert estimate_se(rate, [s])[0] == pytest.approx(
        radio.spectrum_efficiency(0.9 * radio.slot_count(0.1, 2) * radio.tbs_bits(30, 27) / 0.1,
                                  radio.consumed_bandwidth(30, 2)), rel=1e-12)


# --- steps 3 and 4 ------------------------------------------------------------

def test_qos_score_examples():
    bler = np.full((1, 27), 0.001)
    cards = qos_scores([75 * MB], [5], bler, [snap(0, 3)], REQ)
    c = cards[0]
    assert c.rate_score == pytest.approx(0.5, rel=1e-12)
    assert c.lat_score == 1.0  # 0.4 ms over 0.25 ms
    assert c.rel_score == 1.0  # 0.999 / 0.99 capped
    macro = qos_scores([75 * MB], [5], bler, [snap(0, 0)], REQ)[0]
    assert macro.lat_score == pytest.approx(0.2, rel=1e-12)


def test_literal_reliability_score_rewards_failures():
    bler = np.full((1, 27), 0.5)
    fixed = qos_scores([1.0], [3], bler, [snap(0)], REQ)[0]
    literal = qos_scores([1.0], [3], bler, [snap(0)], REQ, literal_reliability_score=True)[0]
    assert fixed.rel_score == pytest.approx(0.5 / 0.99, rel=1e-12)
    assert literal.rel_score == pytest.approx(0.5 / 0.99, rel=1e-12)
    low = np.full((1, 27), 0.01)
    assert qos_scores([1.0], [3], low, [snap(0)], REQ, literal_reliability_score=True)[0].rel_score == pytest.approx(0.01 / 0.99)
    assert qos_scores([1.0], [3], low, [snap(0)], REQ)[0].rel_score == 1.0


def test_se_score_examples():
    assert se_scores([2, 1]).tolist() == [1.0, 0.5]
    assert se_scores([3.3]).tolist() == [1.0]
    assert se_scores([0, 0]).tolist() == [0, 0]


def test_overall_score_examples():
    c = card(0, 1.0)
    c.rate_score, c.rel_score, c.lat_score, c.se_score = 1, 1, 0.5, 0.8
    assert overall_score(c, (0.25,) * 4) == pytest.approx(0.825, rel=1e-12)
    assert overall_score(c, (1, 0, 0, 0)) == 1
    c.lat_score = c.se_score = 1
    assert overall_score(c, (0.1, 0.2, 0.3, 0.4)) == pytest.approx(1.0, rel=1e-12)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.floats(0, 1), st.sampled_from([0, 1, 2, 3]), st.integers(0, 66)),
                min_size=1, max_size=6))
def test_scores_bounded(rows):
    snaps = [snap(i, mu, av) for i, (_, mu, av) in enumerate(rows)]
    bler = np.array([np.full(27, b) for b, _, _ in rows])
    for c in score_cards(bler, snaps, REQ, 0.1):
        for v in (c.rate_score, c.rel_score, c.lat_score, c.se_score, c.overall):
            assert 0 <= v <= 1 + 1e-12


def _cards_from(rates, ses, rel=1.0, lat=1.0):
    cards = []
    top = max(ses)
    for i, (r, se) in enumerate(zip(rates, ses)):
        c = card(i, r)
        c.rate_score = min(1.0, r / REQ.rate_req)
        c.rel_score, c.lat_score = rel, lat
        c.es_se = se
        c.se_score = se / top if top > 0 else 0.0
        c.overall = overall_score(c, REQ.weights)
        cards.append(c)
    return cards


def _position(cards, gid):
    from qosmc.selector import _sort_key
    return [c.gnb_id for c in sorted(cards, key=_sort_key)].index(gid)


@given(st.lists(st.floats(0, 300 * MB), min_size=2, max_size=6), st.integers(0, 5), st.floats(0, 100 * MB))
def test_raising_a_rate_never_lowers_its_score_or_rank(rates, j, bump):
    j %= len(rates)
    ses = [1.0] * len(rates)  # same normaliser before and after
    before = _cards_from(rates, ses)
    after = _cards_from([r + bump if i == j else r for i, r in enumerate(rates)], ses)
    assert after[j].rate_score >= before[j].rate_score
    assert _position(after, j) <= _position(before, j)


@given(st.lists(st.floats(1 * MB, 100 * MB), min_size=2, max_size=6), st.floats(0.1, 1.4))
def test_common_rate_scale_keeps_order(rates, scale):
    # SE proportional to rate (same bandwidth everywhere), rate scores unsaturated
    order = lambda rs: [c.gnb_id for c in sorted(_cards_from(rs, rs), key=lambda c: (-c.overall, c.gnb_id))]  # noqa: E731
    assert order(rates) == order([r * scale for r in rates])


# --- step 5 -------------------------------------------------------------------

def test_greedy_examples():
    cards = [card(0, 100 * MB, 0.9), card(1, 80 * MB, 0.8), card(2, 60 * MB, 0.7)]
    members, covered = select_cluster(cards, REQ, 4)
    assert [c.gnb_id for c in members] == [0, 1] and covered
    members, covered = select_cluster([card(5, 200 * MB)], REQ, 4)
    assert [c.gnb_id for c in members] == [5] and covered
    tiny = [card(i, 1 * MB, 0.5) for i in range(6)]
    members, covered = select_cluster(tiny, REQ, 4)
    assert len(members) == 4 and not covered
    with pytest.raises(NoFeasibleClusterError):
        select_cluster([], REQ, 4)


def test_ties_broken_by_rate_then_id():
    cards = [card(3, 50 * MB, 0.5), card(1, 50 * MB, 0.5), card(2, 90 * MB, 0.5)]
    members, _ = select_cluster(cards, REQ, 1)
    assert members[0].gnb_id == 2
    members, _ = select_cluster(cards[:2], REQ, 1)
    assert members[0].gnb_id == 1


def test_lookahead_skips_a_dead_end():
    # the best-scored gNB is weak; with room for two, taking it first would strand the requirement
    cards = [card(0, 10 * MB, 0.9), card(1, 80 * MB, 0.5), card(2, 80 * MB, 0.4)]
    members, covered = select_cluster(cards, REQ, 2)
    assert covered and sorted(c.gnb_id for c in members) == [1, 2]


def _brute_feasible(rates, cap, need):
    return any(sum(c) >= need for k in range(1, cap + 1) for c in itertools.combinations(rates, k))


def test_greedy_feasibility_matches_exhaustive_search():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        b = int(rng.integers(1, 6))
        cap = int(rng.integers(1, 5))
        rates = rng.choice([0.0, 1.0], b, p=[0.1, 0.9]) * rng.uniform(0, 120 * MB, b)
        cards = [card(i, float(r), float(rng.uniform())) for i, r in enumerate(rates)]
        members, covered = select_cluster(cards, REQ, cap)
        assert covered == _brute_feasible(rates, cap, REQ.rate_req)
        assert 1 <= len(members) <= cap
        if covered:
            # minimal prefix: without its last member the requirement is not met
            assert sum(c.max_es_rate for c in members[:-1]) < REQ.rate_req
        cf = participation_factors([c.max_es_rate for c in members])
        assert abs(sum(cf) - 1.0) <= 1e-9


# --- step 6 -------------------------------------------------------------------

def test_participation_factor_examples():
    assert participation_factors([100, 50]) == pytest.approx([2 / 3, 1 / 3], rel=1e-12)
    assert participation_factors([7]) == [1.0]
    assert participation_factors([0, 0]) == [0.5, 0.5]
    assert participation_factors([]) == []


@given(st.lists(st.floats(0, 1e9), min_size=1, max_size=5))
def test_participation_factors_sum_and_order(rates):
    cf = participation_factors(rates)
    assert abs(sum(cf) - 1) <= 1e-9
    for (ra, ca), (rb, cb) in itertools.combinations(zip(rates, cf), 2):
        if ra > rb:
            assert ca >= cb


def test_required_rbs_exact_division():
    # MCS 1 at mu 0: per RB per slot 156 * 193/1024 * 2 bits; pick a rate that is an exact multiple
    e = radio.default_mcs_table()[1]
    per_rb = radio.slot_count(0.1, 0) * 156 * e.coding_rate * e.bits_per_symbol
    assert required_rbs(12 * per_rb / 0.1, 0.1, 0, 0.0, 1) == 12
    assert required_rbs(12.01 * per_rb / 0.1, 0.1, 0, 0.0, 1) == 13
    assert required_rbs(0.0, 0.1, 0, 0.0, 1) == 0
    assert required_rbs(1.0, 0.1, 0, 1.0, 1) == math.inf


def test_allocation_clamps_and_flags_shortfall():
    s = snap(0, 3, 10)
    m = [ClusterMember(0, 27, 1.0, bler=0.1)]
    allocate_rbs(m, {0: s}, 10e9, 0.1)
    assert m[0].rbs == 10 and m[0].shortfall


@settings(max_examples=200)
@given(st.lists(st.tuples(st.sampled_from([0, 2, 3]), st.integers(1, 27), st.floats(0, 0.9)),
                min_size=1, max_size=4), st.floats(1 * MB, 400 * MB))
def test_allocation_round_trip_meets_share(members, rate):
    snaps = {i: snap(i, mu, 10_000) for i, (mu, _, _) in enumerate(members)}
    cf = participation_factors([1.0 + i for i in range(len(members))])
    ms = [ClusterMember(i, mcs, c, bler=b) for (i, (mu, mcs, b)), c in zip(enumerate(members), cf)]
    allocate_rbs(ms, snaps, rate, 0.1)
    for m in ms:
        s = snaps[m.gnb_id]
        delivered = (1 - m.bler) * radio.slot_count(0.1, s.numerology) * radio.tbs_bits(m.rbs, m.mcs) / 0.1
        # floor of the TBS may cost up to one bit per slot
        slack = radio.slot_count(0.1, s.numerology) / 0.1
        assert not m.shortfall
        assert delivered + slack >= m.cf * rate * (1 - 1e-9)


# --- full decision ----------------------------------------------------------------

def test_decide_excludes_constraint_violators():
    snaps = [snap(0, 0, 66, snr=40.0), snap(1, 3, 66, snr=40.0), snap(2, 3, 66, snr=-5.0)]
    a, cards = decide(snaps, OracleEstimator(), REQ)
    assert a.member_ids == [1] and a.feasible
    by_id = {c.gnb_id: c for c in cards}
    assert not by_id[0].eligible  # 2 ms minimum latency > 0.4 ms
    assert not by_id[2].eligible  # cannot reach 0.99 per attempt
    assert abs(sum(a.cf) - 1) <= 1e-9


def test_decide_relaxes_when_nothing_is_eligible():
    snaps = [snap(0, 0, 66, snr=10.0)]
    a, _ = decide(snaps, OracleEstimator(), REQ)
    assert a.member_ids == [0] and not a.feasible and a.notes["constraints_relaxed"]


def test_decide_without_constraints_and_json():
    snaps = [snap(0, 0, 66, snr=30.0), snap(1, 3, 66, snr=30.0)]
    a, _ = decide(snaps, OracleEstimator(), REQ, SelectorConfig(enforce_constraints=False))
    doc = a.to_json()
    assert set(doc) >= {"members", "cf", "rbs", "mcs", "feasible", "shortfall"}
    assert a.connectivity([0, 1, 2]) == [int(0 in a.member_ids), int(1 in a.member_ids), 0]


def test_decide_rejects_empty_candidates():
    with pytest.raises(NoFeasibleClusterError):
        decide([], ConstantEstimator(0.0), REQ)


def test_requirement_validation():
    with pytest.raises(ValueError):
        QosRequirement(weights=(0.5, 0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        QosRequirement(rel_req=1.5)
    with pytest.raises(ValueError):
        GnbSnapshot(0, 0, 0, -1)


def test_es_rate_matrix_uses_available_rbs():
    m = es_rate_matrix(np.zeros((2, 27)), [snap(0, 3, 66), snap(1, 3, 33)], 0.1)
    assert m[0, 26] == pytest.approx(m[1, 26] * radio.tbs_bits(66, 27) / radio.tbs_bits(33, 27), rel=1e-12)
