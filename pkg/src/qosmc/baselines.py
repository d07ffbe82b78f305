"""Comparison selectors: nearest-gNB single connectivity and a load-balancing proxy.

The load-balancing selector stands in for a DRL multi-connectivity agent
(DRLMC). It pursues the same goal, spreading load under a rate constraint,
without any learned policy, and every output labels it as a proxy.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .channel import Position
from .radio import McsTable
from .selector import (
    BlerEstimator, ClusterAssignment, ClusterMember, GnbSnapshot, NoFeasibleClusterError,
    QosRequirement, allocate_rbs, build_bler_matrix, estimate_rates,
)

LBMC_LABEL = "lbmc (DRLMC proxy)"


def nearest_gnb(snapshots: Sequence[GnbSnapshot], ue: Position) -> GnbSnapshot:
    if not snapshots:
        raise NoFeasibleClusterError("no candidate gNBs")
    return min(snapshots, key=lambda s: (s.position.distance(ue), s.id))


def snr_single_connectivity(snapshots: Sequence[GnbSnapshot], ue: Position, estimator: BlerEstimator,
                            req: QosRequirement, t: float, table: McsTable | None = None,
                            target_rate: float | None = None) -> ClusterAssignment:
    """Serve from the closest gNB alone."""
    snap = nearest_gnb(snapshots, ue)
    bler = build_bler_matrix([snap], estimator)
    rate, mcs = estimate_rates(bler, [snap], t, table)
    member = ClusterMember(snap.id, int(mcs[0]), 1.0, bler=float(bler[0, mcs[0] - 1]), max_es_rate=float(rate[0]))
    allocate_rbs([member], {snap.id: snap}, target_rate or req.rate_req, t, table)
    return ClusterAssignment([member], not member.shortfall and rate[0] >= req.rate_req, "snr",
                             {"rate_covered": bool(rate[0] >= req.rate_req)})


def load_balancing_mc(snapshots: Sequence[GnbSnapshot], estimator: BlerEstimator, req: QosRequirement,
                      max_cluster_size: int, t: float, table: McsTable | None = None,
                      target_rate: float | None = None) -> ClusterAssignment:
    """Add gNBs with the most free RBs first until the estimated rate covers the requirement.

    Traffic is split in proportion to free RBs, not link quality.
    """
    if not snapshots:
        raise NoFeasibleClusterError("no candidate gNBs")
    bler = build_bler_matrix(snapshots, estimator)
    rates, mcs = estimate_rates(bler, snapshots, t, table)
    order = sorted(range(len(snapshots)), key=lambda i: (-snapshots[i].available_rbs, snapshots[i].id))
    chosen: list[int] = []
    total = 0.0
    for i in order:
        if len(chosen) >= max_cluster_size or total >= req.rate_req:
            break
        chosen.append(i)
        total += rates[i]
    avail = np.array([snapshots[i].available_rbs for i in chosen], dtype=float)
    if avail.sum() > 0:
        cfs = avail / avail.sum()
    else:
        cfs = np.full(len(chosen), 1.0 / len(chosen))
    members = [ClusterMember(snapshots[i].id, int(mcs[i]), float(cf), bler=float(bler[i, mcs[i] - 1]),
                             max_es_rate=float(rates[i])) for i, cf in zip(chosen, cfs)]
    allocate_rbs(members, {s.id: s for s in snapshots}, target_rate or req.rate_req, t, table)
    covered = total >= req.rate_req
    return ClusterAssignment(members, covered and not any(m.shortfall for m in members), "lbmc",
                             {"rate_covered": bool(covered), "label": LBMC_LABEL})
