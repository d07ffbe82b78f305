"""QoS-aware serving-cluster selection.

One decision per epoch over immutable gNB snapshots:

1. estimate BLER for every gNB and MCS (the BLER matrix),
2. derive each gNB's best estimated rate, its MCS, and spectrum efficiency,
3. score rate, reliability, latency and spectrum efficiency,
4. combine the four scores with the requirement weights,
5. greedily build the cluster in score order until the rate is covered,
6. split traffic by estimated rate and size the RB allocations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import radio
from .channel import CqiHistory, Position
from .radio import MAX_MCS, McsTable, default_mcs_table


class NoFeasibleClusterError(ValueError):
    """No candidate gNB is available to serve the UE."""


@dataclass(frozen=True)
class QosRequirement:
    rate_req: float = 150e6
    rel_req: float = 0.99
    lat_req: float = 0.4e-3
    weights: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)

    def __post_init__(self):
        if not self.rate_req > 0:
            raise ValueError("rate requirement must be positive")
        if not 0 < self.rel_req <= 1:
            raise ValueError("reliability requirement must lie in (0, 1]")
        if not self.lat_req > 0:
            raise ValueError("latency requirement must be positive")
        if len(self.weights) != 4 or any(w < 0 for w in self.weights):
            raise ValueError("need four nonnegative weights")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {sum(self.weights)}")


@dataclass(frozen=True)
class GnbSnapshot:
    """What the selector sees of one gNB at a decision epoch."""

    id: int
    numerology: int
    power_level: int
    available_rbs: int
    cqi_history: tuple[int, ...] = ()
    history_length: int = 20
    position: Position | None = None
    # true wideband SNR; only oracle-backed estimators may read it
    snr_db: float | None = None

    def __post_init__(self):
        if self.available_rbs < 0:
            raise ValueError("available RBs must be nonnegative")

    @property
    def warm(self) -> bool:
        return len(self.cqi_history) >= self.history_length

    def history(self) -> CqiHistory:
        return CqiHistory(self.history_length).extend(self.cqi_history)


# maps one snapshot to the 27 estimated BLERs for MCS 1..27
BlerEstimator = Callable[[GnbSnapshot], np.ndarray]


@dataclass
class ScoreCard:
    gnb_id: int
    max_es_rate: float
    mcs: int
    es_se: float
    bler: float
    min_latency: float
    rate_score: float = 0.0
    rel_score: float = 0.0
    lat_score: float = 0.0
    se_score: float = 0.0
    overall: float = 0.0
    eligible: bool = True

    def to_json(self) -> dict:
        return {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in self.__dict__.items()}


@dataclass
class ClusterMember:
    gnb_id: int
    mcs: int
    cf: float
    rbs: int = 0
    bler: float = 0.0
    max_es_rate: float = 0.0
    shortfall: bool = False


@dataclass
class ClusterAssignment:
    members: list[ClusterMember]
    feasible: bool = True
    policy: str = "proposed"
    notes: dict = field(default_factory=dict)

    @property
    def degree(self) -> int:
        return len(self.members)

    @property
    def member_ids(self) -> list[int]:
        return [m.gnb_id for m in self.members]

    @property
    def cf(self) -> list[float]:
        return [m.cf for m in self.members]

    def connectivity(self, gnb_ids: Sequence[int]) -> list[int]:
        ids = set(self.member_ids)
        return [1 if g in ids else 0 for g in gnb_ids]

    def to_json(self) -> dict:
        return {
            "policy": self.policy,
            "members": self.member_ids,
            "mcs": [m.mcs for m in self.members],
            "cf": self.cf,
            "rbs": [m.rbs for m in self.members],
            "shortfall": [m.shortfall for m in self.members],
            "feasible": self.feasible,
            **self.notes,
        }


# --- step 1 -------------------------------------------------------------------

def build_bler_matrix(snapshots: Sequence[GnbSnapshot], estimator: BlerEstimator) -> np.ndarray:
    m = np.array([np.asarray(estimator(s), dtype=float) for s in snapshots]).reshape(len(snapshots), MAX_MCS)
    return np.clip(m, 0.0, 1.0)


# --- step 2 -------------------------------------------------------------------

def es_rate_matrix(bler: np.ndarray, snapshots: Sequence[GnbSnapshot], t: float,
                   table: McsTable | None = None) -> np.ndarray:
    """Estimated rate per gNB and MCS with each gNB's available RBs."""
    table = table or default_mcs_table()
    out = np.zeros((len(snapshots), MAX_MCS))
    for i, s in enumerate(snapshots):
        ns = radio.slot_count(t, s.numerology)
        tbs = np.array([radio.tbs_bits(s.available_rbs, m, table) for m in range(1, MAX_MCS + 1)], dtype=float)
        out[i] = (1.0 - bler[i]) * ns * tbs / t
    return out


def estimate_rates(bler: np.ndarray, snapshots: Sequence[GnbSnapshot], t: float,
                   table: McsTable | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Row maxima of the estimated-rate matrix and their MCS (lowest MCS on ties)."""
    if not t > 0:
        raise ValueError("interval must be positive")
    rates = es_rate_matrix(np.asarray(bler, dtype=float), snapshots, t, table)
    best = np.argmax(rates, axis=1)  # first maximum, i.e. lowest MCS
    return rates[np.arange(len(snapshots)), best], best + 1


def estimate_se(max_rates: Sequence[float], snapshots: Sequence[GnbSnapshot]) -> np.ndarray:
    out = np.zeros(len(snapshots))
    for i, (r, s) in enumerate(zip(max_rates, snapshots)):
        cbw = radio.consumed_bandwidth(s.available_rbs, s.numerology)
        out[i] = 0.0 if cbw == 0 and r == 0 else radio.spectrum_efficiency(r, cbw)
    return out


# --- steps 3 and 4 ------------------------------------------------------------

def qos_scores(max_rates, mcs_star, bler: np.ndarray, snapshots: Sequence[GnbSnapshot],
               req: QosRequirement, literal_reliability_score: bool = False) -> list[ScoreCard]:
    cards = []
    for i, s in enumerate(snapshots):
        b = float(bler[i, int(mcs_star[i]) - 1])
        lat = radio.min_latency(s.numerology)
        # the printed form rewards higher BLER; the default scores delivered fraction
        rel_num = b if literal_reliability_score else 1.0 - b
        cards.append(ScoreCard(
            gnb_id=s.id, max_es_rate=float(max_rates[i]), mcs=int(mcs_star[i]), es_se=0.0, bler=b,
            min_latency=lat,
            rate_score=min(1.0, float(max_rates[i]) / req.rate_req),
            rel_score=min(1.0, rel_num / req.rel_req),
            lat_score=min(1.0, req.lat_req / lat),
        ))
    return cards


def se_scores(es_se: Sequence[float]) -> np.ndarray:
    es_se = np.asarray(es_se, dtype=float)
    if es_se.size == 0:
        return es_se
    top = es_se.max()
    if top <= 0:
        return np.zeros_like(es_se)
    return es_se / top


def overall_score(card: ScoreCard, weights: Sequence[float]) -> float:
    a, b, g, d = weights
    return a * card.rate_score + b * card.rel_score + g * card.lat_score + d * card.se_score


def score_cards(bler: np.ndarray, snapshots: Sequence[GnbSnapshot], req: QosRequirement, t: float,
                table: McsTable | None = None, literal_reliability_score: bool = False) -> list[ScoreCard]:
    """Steps 2 to 4 over a BLER matrix."""
    max_rates, mcs_star = estimate_rates(bler, snapshots, t, table)
    es_se = estimate_se(max_rates, snapshots)
    cards = qos_scores(max_rates, mcs_star, bler, snapshots, req, literal_reliability_score)
    for card, se, score in zip(cards, es_se, se_scores(es_se)):
        card.es_se = float(se)
        card.se_score = float(score)
        card.overall = overall_score(card, req.weights)
    return cards


def apply_constraints(cards: Sequence[ScoreCard], bler: np.ndarray, req: QosRequirement) -> None:
    """Mark gNBs that cannot meet the latency or per-attempt reliability bound."""
    for i, card in enumerate(cards):
        best_rel = 1.0 - float(np.min(bler[i]))
        card.eligible = card.min_latency <= req.lat_req * (1 + 1e-12) and best_rel >= req.rel_req


# --- step 5 -------------------------------------------------------------------

def _sort_key(card: ScoreCard):
    return (-card.overall, -card.max_es_rate, card.gnb_id)


def select_cluster(cards: Sequence[ScoreCard], req: QosRequirement, max_cluster_size: int = 4
                   ) -> tuple[list[ScoreCard], bool]:
    """Greedy cluster in score order; returns (members, rate covered).

    Candidates are taken in descending overall score. A candidate is skipped
    only when taking it would make the rate unreachable within the remaining
    slots although it is still reachable, so the greedy prefix is feasible
    whenever any cluster of the allowed size is.
    """
    if not cards:
        raise NoFeasibleClusterError("no candidate gNBs")
    if max_cluster_size < 1:
        raise ValueError("max cluster size must be at least 1")
    order = sorted(cards, key=_sort_key)
    members: list[ScoreCard] = []
    total = 0.0
    remaining = list(order)
    while remaining and len(members) < max_cluster_size and total < req.rate_req:
        slots_after = max_cluster_size - len(members) - 1
        pick = None
        if _reachable(total, remaining, slots_after + 1, req.rate_req):
            for cand in remaining:
                rest = sorted((c.max_es_rate for c in remaining if c is not cand), reverse=True)
                if total + cand.max_es_rate + sum(rest[:slots_after]) >= req.rate_req:
                    pick = cand
                    break
        if pick is None:
            pick = remaining[0]
        members.append(pick)
        remaining.remove(pick)
        total += pick.max_es_rate
    return members, total >= req.rate_req


def _reachable(total: float, cands: Sequence[ScoreCard], slots: int, target: float) -> bool:
    best = sorted((c.max_es_rate for c in cands), reverse=True)[:slots]
    return total + sum(best) >= target


# --- step 6 -------------------------------------------------------------------

def participation_factors(rates: Sequence[float]) -> list[float]:
    rates = [float(r) for r in rates]
    if not rates:
        return []
    total = sum(rates)
    if total <= 0:
        return [1.0 / len(rates)] * len(rates)
    return [r / total for r in rates]


def required_rbs(share_rate: float, t: float, mu: int, bler: float, mcs: int,
                 table: McsTable | None = None) -> int:
    """Smallest RB count whose expected goodput over ``t`` covers ``share_rate``."""
    entry = (table or default_mcs_table())[mcs]
    ns = radio.slot_count(t, mu)
    per_rb = ns * (1.0 - bler) * radio.RE_PER_RB * entry.coding_rate * entry.bits_per_symbol
    demand = share_rate * t
    if demand <= 0:
        return 0
    if per_rb <= 0:
        return math.inf
    q = demand / per_rb
    # guard against 10.000000001-style rounding above an exact quotient
    return math.ceil(q - 1e-9 * max(1.0, q))


def allocate_rbs(members: Sequence[ClusterMember], snapshots_by_id: dict[int, GnbSnapshot],
                 rate: float, t: float, table: McsTable | None = None) -> list[ClusterMember]:
    """Size each member's RBs for its CF share of ``rate``; clamp to availability."""
    for m in members:
        snap = snapshots_by_id[m.gnb_id]
        need = required_rbs(m.cf * rate, t, snap.numerology, m.bler, m.mcs, table)
        if need > snap.available_rbs:
            m.rbs = snap.available_rbs
            m.shortfall = True
        else:
            m.rbs = int(need)
            m.shortfall = False
    return members


# --- the full decision ----------------------------------------------------------

@dataclass
class SelectorConfig:
    max_cluster_size: int = 4
    literal_reliability_score: bool = False
    epoch_s: float = 0.1
    enforce_constraints: bool = True


def decide(snapshots: Sequence[GnbSnapshot], estimator: BlerEstimator, req: QosRequirement,
           cfg: SelectorConfig | None = None, table: McsTable | None = None,
           target_rate: float | None = None) -> tuple[ClusterAssignment, list[ScoreCard]]:
    """Run all six steps; ``target_rate`` overrides the rate the allocation is sized for."""
    cfg = cfg or SelectorConfig()
    if not snapshots:
        raise NoFeasibleClusterError("no candidate gNBs")
    bler = build_bler_matrix(snapshots, estimator)
    cards = score_cards(bler, snapshots, req, cfg.epoch_s, table, cfg.literal_reliability_score)
    candidates = list(cards)
    constrained_out = False
    if cfg.enforce_constraints:
        apply_constraints(cards, bler, req)
        eligible = [c for c in cards if c.eligible]
        if eligible:
            candidates = eligible
        else:
            constrained_out = True
    chosen, covered = select_cluster(candidates, req, cfg.max_cluster_size)
    cfs = participation_factors([c.max_es_rate for c in chosen])
    members = [ClusterMember(c.gnb_id, c.mcs, cf, bler=c.bler, max_es_rate=c.max_es_rate)
               for c, cf in zip(chosen, cfs)]
    by_id = {s.id: s for s in snapshots}
    allocate_rbs(members, by_id, target_rate or req.rate_req, cfg.epoch_s, table)
    feasible = covered and not constrained_out and not any(m.shortfall for m in members)
    notes = {"rate_covered": covered, "constraints_relaxed": constrained_out}
    return ClusterAssignment(members, feasible, "proposed", notes), cards
