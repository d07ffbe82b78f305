"""Slot-level downlink simulation of one UE served by a (possibly multi-gNB) cluster.

Each selection epoch the UE moves, background load shifts, CQI reports are
pushed, and the policy picks a cluster. Every member then runs its own slot
clock: one transport block per slot, failed blocks retransmitted two slots
later, at most four attempts. Traffic is split per member into 1500-byte
packets; a packet counts as received only when every block carrying it
decodes.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from . import radio
from .baselines import LBMC_LABEL, load_balancing_mc, snr_single_connectivity
from .channel import (
    CqiHistory, NotReadyError, Position, ShadowingField, initial_mobility, path_loss_db, snr_db,
    snr_to_cqi, step_mobility,
)
from .config import ScenarioConfig
from .selector import BlerEstimator, ClusterAssignment, GnbSnapshot, ScoreCard, decide

MAX_ATTEMPTS = 4
RETX_GAP_SLOTS = 2
POLICIES = ("proposed", "snr", "lbmc")


# --- HARQ ---------------------------------------------------------------------

@dataclass
class HarqProcess:
    tb_id: int
    numerology: int
    attempts: int = 0
    outcomes: list[bool] = field(default_factory=list)
    state: str = "pending"  # pending | decoded | lost

    @property
    def latency(self) -> float:
        """Time from first transmission to decode: two slots per attempt."""
        return RETX_GAP_SLOTS * self.attempts * radio.slot_duration(self.numerology)


def harq_step(proc: HarqProcess, decode_success: bool) -> HarqProcess:
    if proc.state != "pending":
        raise ValueError(f"HARQ process {proc.tb_id} already {proc.state}")
    proc.attempts += 1
    proc.outcomes.append(bool(decode_success))
    if decode_success:
        proc.state = "decoded"
    elif proc.attempts >= MAX_ATTEMPTS:
        proc.state = "lost"
    return proc


def residual_loss(bler: float) -> float:
    """Loss probability after all attempts, attempts independent."""
    if not 0.0 <= bler <= 1.0:
        raise ValueError("BLER must lie in [0, 1]")
    return bler ** MAX_ATTEMPTS


# --- background load ----------------------------------------------------------------

def step_background_load(occupied: np.ndarray, rng: np.random.Generator, step: int = 5,
                         max_occupied: int = 40) -> np.ndarray:
    """Bounded random walk of occupied RBs, reflecting at 0 and ``max_occupied``."""
    occ = np.asarray(occupied, dtype=int)
    if step <= 0:
        return occ.copy()
    nxt = occ + rng.integers(-step, step + 1, size=occ.shape)
    nxt = np.where(nxt < 0, -nxt, nxt)
    nxt = np.where(nxt > max_occupied, 2 * max_occupied - nxt, nxt)
    return np.clip(nxt, 0, max_occupied)


# --- metrics ------------------------------------------------------------------

METRIC_FIELDS = ("avg_rate", "avg_latency", "reliability", "resource_hz", "spectrum_efficiency",
                 "qos_rate_score", "qos_lat_score", "qos_rel_score")


@dataclass
class RunMetrics:
    avg_rate: float
    avg_latency: float
    reliability: float
    resource_hz: float
    spectrum_efficiency: float
    qos_rate_score: float
    qos_lat_score: float
    qos_rel_score: float
    extras: dict = field(default_factory=dict)

    @property
    def qos_met(self) -> bool:
        return self.qos_rate_score == 1.0 and self.qos_lat_score == 1.0 and self.qos_rel_score == 1.0

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_FIELDS}


@dataclass
class MemberStats:
    """Per-gNB totals collected over a run."""

    delivered_bits: float = 0.0
    packets_sent: int = 0
    packets_delivered: int = 0
    latency_sum: float = 0.0  # over delivered packets


def collect_metrics(members: Sequence[MemberStats], duration: float, resource_hz_s: float,
                    rate_req: float, rel_req: float, lat_req: float, extras: dict | None = None) -> RunMetrics:
    """Combine per-gNB totals; latency and reliability are rate-weighted across gNBs."""
    if not duration > 0:
        raise ValueError("duration must be positive")
    delivered = sum(m.delivered_bits for m in members)
    avg_rate = delivered / duration
    weights, lats, rels = [], [], []
    for m in members:
        if m.delivered_bits > 0 and m.packets_sent > 0:
            weights.append(m.delivered_bits)
            rels.append(m.packets_delivered / m.packets_sent)
            lats.append(m.latency_sum / m.packets_delivered if m.packets_delivered else math.inf)
    if weights:
        w = np.asarray(weights) / sum(weights)
        reliability = float(np.dot(w, rels))
        avg_latency = float(np.dot(w, lats))
    else:
        sent = sum(m.packets_sent for m in members)
        got = sum(m.packets_delivered for m in members)
        reliability = got / sent if sent else 0.0
        avg_latency = math.inf
    resource = resource_hz_s / duration
    se = radio.spectrum_efficiency(avg_rate, resource) if resource > 0 else 0.0
    return RunMetrics(
        avg_rate=avg_rate,
        avg_latency=avg_latency,
        reliability=reliability,
        resource_hz=resource,
        spectrum_efficiency=se,
        qos_rate_score=min(1.0, avg_rate / rate_req),
        qos_lat_score=latency_score(avg_latency, lat_req),
        qos_rel_score=min(1.0, reliability / rel_req),
        extras=dict(extras or {}),
    )


def latency_score(avg_latency: float, lat_req: float) -> float:
    """min(1, LatReq / latency); nothing delivered (infinite latency) scores 0."""
    if not math.isfinite(avg_latency):
        return 0.0
    return 1.0 if avg_latency <= 0 else min(1.0, lat_req / avg_latency)


def aggregate_repetitions(runs: Sequence[RunMetrics]) -> dict[str, dict[str, float]]:
    """Mean and sample standard deviation of every metric across repetitions."""
    if not runs:
        raise ValueError("no runs to aggregate")
    out = {}
    for key in METRIC_FIELDS:
        vals = np.array([getattr(r, key) for r in runs], dtype=float)
        mean = float(vals.mean())
        std = float(vals.std(ddof=1)) if len(vals) > 1 and np.all(np.isfinite(vals)) else 0.0
        out[key] = {"mean": mean, "std": std}
    out["qos_success_rate"] = {"mean": float(np.mean([r.qos_met for r in runs])), "std": 0.0}
    return out


# --- policies -----------------------------------------------------------------

Policy = Callable[[Sequence[GnbSnapshot], Position], "tuple[ClusterAssignment, list[ScoreCard] | None]"]


def make_policy(name: str, cfg: ScenarioConfig, estimator: BlerEstimator | None) -> Policy:
    if name not in POLICIES:
        raise ValueError(f"unknown policy {name!r}; expected one of {POLICIES}")
    if estimator is None:
        raise NotReadyError(f"policy {name!r} needs a trained BLER estimator")
    table = cfg.mcs_table()
    sel_cfg = cfg.selector_config()
    target = offered_rate(cfg) * cfg.allocation_headroom

    if name == "proposed":
        def policy(snaps, ue):
            return decide(snaps, estimator, cfg.qos, sel_cfg, table, target_rate=target)
    elif name == "snr":
        def policy(snaps, ue):
            return snr_single_connectivity(snaps, ue, estimator, cfg.qos, cfg.epoch_s, table, target), None
    else:
        def policy(snaps, ue):
            return load_balancing_mc(snaps, estimator, cfg.qos, cfg.max_cluster_size, cfg.epoch_s, table,
                                     target), None
    policy.__name__ = name
    return policy


def offered_rate(cfg: ScenarioConfig) -> float:
    if cfg.traffic.model == "cbr":
        return cfg.traffic.offered_rate_factor * cfg.qos.rate_req
    return cfg.qos.rate_req


# --- packets ------------------------------------------------------------------

TB_LOST, TB_OK, TB_OPEN = 0, 1, 2


def packet_outcomes(starts, ends, status, latency, packet_bits: int) -> tuple[int, int, float]:
    """Map one gNB's transport blocks onto fixed-size packets of its bit stream.

    The blocks must tile the stream from bit 0 without gaps. A packet is lost
    if any block carrying it is lost, delivered once every such block decoded,
    and left out while one is still in flight. A delivered packet's latency is
    the largest latency among its blocks. Returns (packets resolved, packets
    delivered, summed latency of delivered packets); a trailing partial packet
    is ignored.
    """
    if packet_bits <= 0:
        raise ValueError("packet size must be positive")
    if not len(starts):
        return 0, 0, 0.0
    order = np.argsort(starts, kind="stable")
    starts = np.asarray(starts, dtype=np.int64)[order]
    ends = np.asarray(ends, dtype=np.int64)[order]
    status = np.asarray(status)[order]
    latency = np.asarray(latency, dtype=float)[order]
    if starts[0] != 0 or np.any(starts[1:] != ends[:-1]):
        raise ValueError("transport blocks must tile the stream without gaps")
    n_packets = int(ends[-1] // packet_bits)
    if not n_packets:
        return 0, 0, 0.0
    k = np.arange(n_packets, dtype=np.int64)
    first = np.searchsorted(ends, k * packet_bits, side="right")
    last = np.searchsorted(starts, (k + 1) * packet_bits, side="left") - 1
    lost_cum = np.concatenate([[0], np.cumsum(status == TB_LOST)])
    open_cum = np.concatenate([[0], np.cumsum(status == TB_OPEN)])
    n_lost = lost_cum[last + 1] - lost_cum[first]
    n_open = open_cum[last + 1] - open_cum[first]
    resolved = (n_lost > 0) | (n_open == 0)
    delivered = resolved & (n_lost == 0)
    pkt_lat = np.zeros(n_packets)
    for d in range(int((last - first).max()) + 1):
        pkt_lat = np.maximum(pkt_lat, latency[np.minimum(first + d, last)])
    return int(resolved.sum()), int(delivered.sum()), float(pkt_lat[delivered].sum())


# --- engine -------------------------------------------------------------------

class _Tb:
    __slots__ = ("id", "start", "end", "mcs", "rbs", "attempts")

    def __init__(self, id, start, end, mcs, rbs):
        self.id, self.start, self.end, self.mcs, self.rbs = id, start, end, mcs, rbs
        self.attempts = 0


class _GnbRun:
    """Mutable per-gNB state of one run."""

    def __init__(self, profile, fading_rng, outcome_rng, shadow: ShadowingField, chl: int):
        self.profile = profile
        self.mu = profile.numerology
        self.slot_s = radio.slot_duration(self.mu)
        self.fading_rng = fading_rng
        self.outcome_rng = outcome_rng
        self.shadow = shadow
        self.history = CqiHistory(chl)
        self.next_slot = 0
        self.pending: dict[int, _Tb] = {}
        self.cursor = 0  # stream bits put on the channel
        self.queue = 0.0  # cbr backlog in bits
        self.offered = 0.0
        self.delivered = 0.0
        self.lost = 0.0
        # resolved TBs: start, end, ok, latency
        self.tb_start: list[int] = []
        self.tb_end: list[int] = []
        self.tb_ok: list[bool] = []
        self.tb_lat: list[float] = []
        self.mean_snr = -math.inf

    @property
    def inflight(self) -> float:
        return float(sum(tb.end - tb.start for tb in self.pending.values()))

    def conserved(self) -> bool:
        lhs = self.offered
        rhs = self.delivered + self.lost + self.inflight + self.queue
        return abs(lhs - rhs) <= 1e-6 * max(1.0, lhs)


BlerOverride = Callable[[int, int, float], float]


class Simulation:
    """One seeded run of one policy over a scenario."""

    def __init__(self, cfg: ScenarioConfig, policy: Policy | str, seed: int, *,
                 estimator: BlerEstimator | None = None, duration: float | None = None,
                 bler_override: float | BlerOverride | None = None, record_events: bool = False,
                 audit: bool = False, check_invariants: bool = False,
                 ue_start: Position | None = None, static_ue: bool = False):
        self.cfg = cfg
        self.policy_name = policy if isinstance(policy, str) else getattr(policy, "__name__", "custom")
        self.policy = make_policy(policy, cfg, estimator) if isinstance(policy, str) else policy
        self.seed = int(seed)
        self.duration = cfg.duration_s if duration is None else duration
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        self.table = cfg.mcs_table()
        self.override = bler_override
        self.record_events = record_events
        self.events: list[dict] = []
        self.audit = audit
        self.audit_log: list[dict] = []
        self.check_invariants = check_invariants
        self.ue_start = ue_start
        self.static_ue = static_ue
        self.assignments: list[ClusterAssignment] = []

    # streams are keyed by role so every policy sees the same channel, load and fades
    def _streams(self):
        root = np.random.SeedSequence(self.seed)
        mob, load, shadow, gnb_root = root.spawn(4)
        per_gnb = gnb_root.spawn(len(self.cfg.gnbs))
        return (np.random.default_rng(mob), np.random.default_rng(load), np.random.default_rng(shadow),
                [tuple(np.random.default_rng(s) for s in seq.spawn(2)) for seq in per_gnb])

    def run(self) -> RunMetrics:
        cfg = self.cfg
        mob_rng, load_rng, shadow_rng, gnb_rngs = self._streams()
        gnbs = [
            _GnbRun(g, f, o, ShadowingField(g.shadowing_sigma_db, cfg.area_m, shadow_rng,
                                            cfg.shadowing_decorrelation_m), cfg.cqi_history_length)
            for g, (f, o) in zip(cfg.gnbs, gnb_rngs)
        ]
        mobility = initial_mobility(cfg.area_m, mob_rng, cfg.speed_range)
        if self.ue_start is not None:
            mobility = type(mobility)(self.ue_start, mobility.waypoint, 0.0 if self.static_ue else mobility.speed)
        occupied = load_rng.integers(0, cfg.load.max_occupied + 1, size=len(gnbs))
        n_epochs = max(1, int(round(self.duration / cfg.epoch_s)))
        load_every = max(1, int(round(cfg.load.period_s / cfg.epoch_s)))
        rate = offered_rate(cfg)
        resource = 0.0
        degrees, feasible = [], []
        self._tb_counter = 0
        self._backlog = 0.0
        prev_members: dict[int, object] = {}

        for epoch in range(n_epochs):
            if epoch:
                if not self.static_ue:
                    mobility = step_mobility(mobility, cfg.epoch_s, cfg.area_m, mob_rng, cfg.speed_range)
                if epoch % load_every == 0:
                    occupied = step_background_load(occupied, load_rng, cfg.load.step, cfg.load.max_occupied)
            ue = mobility.position
            snaps = []
            for g, occ in zip(gnbs, occupied):
                p = g.profile
                g.mean_snr = snr_db(p, path_loss_db(p, ue, g.shadow(ue)))
                g.history.push(snr_to_cqi(g.mean_snr, cfg.cqi_thresholds))
                snaps.append(GnbSnapshot(p.id, p.numerology, p.power_level, int(p.total_rbs - occ),
                                         g.history.as_tuple(), cfg.cqi_history_length, p.position, g.mean_snr))
            assignment, cards = self.policy(snaps, ue)
            self._check_assignment(assignment, snaps)
            self.assignments.append(assignment)
            degrees.append(assignment.degree)
            feasible.append(assignment.feasible)
            if self.audit:
                self.audit_log.append(self._audit_record(epoch, snaps, assignment, cards))

            members = {m.gnb_id: m for m in assignment.members}
            if cfg.traffic.model == "cbr":
                self._reroute(gnbs, prev_members, members)
            for g in gnbs:
                resource += self._run_slots(g, members.get(g.profile.id), rate)
            prev_members = members

        stats = [self._member_stats(g) for g in gnbs]
        tb_total = sum(len(g.tb_ok) for g in gnbs)
        tb_lost = sum(len(g.tb_ok) - sum(g.tb_ok) for g in gnbs)
        extras = {
            "policy": LBMC_LABEL if self.policy_name == "lbmc" else self.policy_name,
            "seed": self.seed,
            "mean_degree": float(np.mean(degrees)),
            "feasible_fraction": float(np.mean(feasible)),
            "tb_resolved": tb_total,
            "tb_lost": tb_lost,
            "packets_sent": sum(s.packets_sent for s in stats),
            "packets_delivered": sum(s.packets_delivered for s in stats),
            "offered_bits": sum(g.offered for g in gnbs) + self._backlog,
            "delivered_bits": sum(g.delivered for g in gnbs),
            "lost_bits": sum(g.lost for g in gnbs),
            "inflight_bits": sum(g.inflight + g.queue for g in gnbs) + self._backlog,
        }
        q = cfg.qos
        return collect_metrics(stats, self.duration, resource, q.rate_req, q.rel_req, q.lat_req, extras)

    def _check_assignment(self, a: ClusterAssignment, snaps: Sequence[GnbSnapshot]) -> None:
        if not a.members:
            raise ValueError("policy returned an empty cluster")
        if self.check_invariants:
            avail = {s.id: s.available_rbs for s in snaps}
            for m in a.members:
                assert 0 <= m.rbs <= avail[m.gnb_id], f"gNB {m.gnb_id}: {m.rbs} RBs > {avail[m.gnb_id]} available"
            assert abs(sum(a.cf) - 1.0) <= 1e-9

    def _reroute(self, gnbs, prev: dict, cur: dict) -> None:
        # backlog left on gNBs that leave the cluster goes back to the CU
        for g in gnbs:
            gid = g.profile.id
            if gid in prev and gid not in cur and g.queue > 0:
                self._backlog += g.queue
                g.offered -= g.queue
                g.queue = 0.0
        if self._backlog > 0:
            for g in gnbs:
                m = cur.get(g.profile.id)
                if m is not None:
                    share = self._backlog * m.cf
                    g.queue += share
                    g.offered += share
            self._backlog = 0.0

    def _bler(self, g: _GnbRun, mcs: int, inst_snr: float) -> float:
        ov = self.override
        if ov is None:
            thr = self.cfg.oracle.snr50[mcs - 1] + self.cfg.oracle.numerology_penalty_db * g.mu
            return float(expit(-self.cfg.oracle.slope * (inst_snr - thr)))
        if callable(ov):
            return float(ov(g.profile.id, mcs, inst_snr))
        return float(ov)

    def _run_slots(self, g: _GnbRun, member, rate: float) -> float:
        """Advance one gNB through an epoch; returns consumed Hz*s."""
        cfg = self.cfg
        n = radio.slot_count(cfg.epoch_s, g.mu)
        s0 = g.next_slot
        g.next_slot += n
        # draws are made every epoch for every gNB so all policies share them
        fade = g.fading_rng.exponential(1.0, size=n) if cfg.fading else None
        uniforms = g.outcome_rng.random(n)
        if member is None and not g.pending:
            return 0.0
        inst = np.full(n, g.mean_snr)
        if fade is not None:
            inst = inst + 10.0 * np.log10(np.maximum(fade, 1e-30))
        active = member is not None and member.rbs > 0
        if active:
            tbs = radio.tbs_bits(member.rbs, member.mcs, self.table)
            if self.override is None:
                o = cfg.oracle
                thr = o.snr50[member.mcs - 1] + o.numerology_penalty_db * g.mu
                bler_new = expit(-o.slope * (inst - thr))
            else:
                bler_new = None
            per_slot_arrival = rate * member.cf * g.slot_s
        scs_hz_s = radio.SUBCARRIERS_PER_RB * radio.subcarrier_spacing(g.mu) * g.slot_s
        used_rb_slots = member.rbs * n if active else 0
        cbr = cfg.traffic.model == "cbr"
        pending = g.pending
        events = self.events if self.record_events else None

        for j in range(n):
            s = s0 + j
            tb = pending.pop(s, None)
            if tb is None:
                if not active:
                    if not pending:
                        break
                    continue
                if cbr:
                    g.queue += per_slot_arrival
                    g.offered += per_slot_arrival
                    payload = min(int(g.queue), tbs)
                    if payload <= 0:
                        continue
                    g.queue -= payload
                else:
                    payload = tbs
                    g.offered += payload
                if payload <= 0:
                    continue
                self._tb_counter += 1
                tb = _Tb(self._tb_counter, g.cursor, g.cursor + payload, member.mcs, member.rbs)
                g.cursor += payload
                bler = bler_new[j] if bler_new is not None else self._bler(g, tb.mcs, inst[j])
            else:
                if cbr and active:
                    g.queue += per_slot_arrival
                    g.offered += per_slot_arrival
                if active and bler_new is not None and tb.mcs == member.mcs:
                    bler = bler_new[j]
                else:
                    bler = self._bler(g, tb.mcs, inst[j])
                if not active or tb.rbs > member.rbs:
                    used_rb_slots += tb.rbs - (member.rbs if active else 0)
            tb.attempts += 1
            if uniforms[j] >= bler:
                self._resolve(g, tb, True, events)
            elif tb.attempts >= MAX_ATTEMPTS:
                self._resolve(g, tb, False, events)
            else:
                pending[s + RETX_GAP_SLOTS] = tb
            if self.check_invariants:
                assert g.conserved(), f"bit conservation broken on gNB {g.profile.id} at slot {s}"
        return used_rb_slots * scs_hz_s

    def _resolve(self, g: _GnbRun, tb: _Tb, ok: bool, events) -> None:
        size = tb.end - tb.start
        latency = RETX_GAP_SLOTS * tb.attempts * g.slot_s
        if ok:
            g.delivered += size
        else:
            g.lost += size
        g.tb_start.append(tb.start)
        g.tb_end.append(tb.end)
        g.tb_ok.append(ok)
        g.tb_lat.append(latency)
        if events is not None:
            events.append({"tb": tb.id, "gnb": g.profile.id, "mu": g.mu, "bits": size, "mcs": tb.mcs,
                           "attempts": tb.attempts, "ok": ok, "latency_s": latency})

    def _member_stats(self, g: _GnbRun) -> MemberStats:
        starts = g.tb_start + [tb.start for tb in g.pending.values()]
        ends = g.tb_end + [tb.end for tb in g.pending.values()]
        status = [TB_OK if ok else TB_LOST for ok in g.tb_ok] + [TB_OPEN] * len(g.pending)
        lat = g.tb_lat + [0.0] * len(g.pending)
        sent, got, lat_sum = packet_outcomes(starts, ends, status, lat, self.cfg.traffic.packet_size_bytes * 8)
        return MemberStats(g.delivered, sent, got, lat_sum)

    def _audit_record(self, epoch: int, snaps, assignment: ClusterAssignment, cards) -> dict:
        digest = hashlib.sha256(json.dumps(
            [[s.id, s.numerology, s.power_level, s.available_rbs, list(s.cqi_history)] for s in snaps]
        ).encode()).hexdigest()[:16]
        return {
            "epoch": epoch,
            "t_s": round(epoch * self.cfg.epoch_s, 9),
            "inputs_digest": digest,
            "score_cards": [c.to_json() for c in cards] if cards else None,
            **assignment.to_json(),
        }


def run_scenario(cfg: ScenarioConfig, policy: Policy | str, seed: int, **kw) -> RunMetrics:
    return Simulation(cfg, policy, seed, **kw).run()


def metrics_to_json(m: RunMetrics) -> dict:
    return asdict(m)
