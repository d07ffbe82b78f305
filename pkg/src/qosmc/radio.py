"""Closed-form NR downlink arithmetic.

Slot counts, transport block sizes, per-gNB and cluster rates, occupied
bandwidth, spectrum efficiency and the HARQ latency bracket. Everything here is
a pure function of its arguments.
"""

from __future__ import annotations

import json
import math
import operator
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

# resource elements available for data in one RB per slot
RE_PER_RB = 156
SUBCARRIERS_PER_RB = 12
BASE_SCS_HZ = 15e3
NUMEROLOGIES = (0, 1, 2, 3)
MAX_MCS = 27
MCS_TABLE_SIZE = 28


def check_numerology(mu: int) -> int:
    if mu not in NUMEROLOGIES:
        raise ValueError(f"numerology must be one of {NUMEROLOGIES}, got {mu!r}")
    return mu


def slot_duration(mu: int) -> float:
    """Slot length in seconds."""
    return 1e-3 / 2 ** check_numerology(mu)


def subcarrier_spacing(mu: int) -> float:
    return BASE_SCS_HZ * 2 ** check_numerology(mu)


@dataclass(frozen=True)
class McsEntry:
    index: int
    bits_per_symbol: int
    coding_rate_x1024: float

    @property
    def coding_rate(self) -> float:
        return self.coding_rate_x1024 / 1024

    @property
    def efficiency(self) -> float:
        """Information bits per resource element (CR * BPMS)."""
        return self.coding_rate * self.bits_per_symbol


class McsTable:
    """The 28-row MCS table. Row 0 is reserved and never used for transmission."""

    def __init__(self, entries: Sequence[McsEntry]):
        entries = list(entries)
        if len(entries) != MCS_TABLE_SIZE:
            raise ValueError(f"MCS table needs exactly {MCS_TABLE_SIZE} entries, got {len(entries)}")
        for pos, e in enumerate(entries):
            if e.index != pos:
                raise ValueError(f"MCS entry at position {pos} has index {e.index}")
            if e.bits_per_symbol not in (2, 4, 6, 8):
                raise ValueError(f"MCS {pos}: bits_per_symbol must be 2, 4, 6 or 8")
            if not 0 < e.coding_rate <= 1:
                raise ValueError(f"MCS {pos}: coding rate must lie in (0, 1]")
        for prev, cur in zip(entries, entries[1:]):
            if cur.bits_per_symbol == prev.bits_per_symbol and cur.coding_rate < prev.coding_rate:
                raise ValueError(f"MCS {cur.index}: coding rate decreases within a modulation order")
        self.entries = tuple(entries)

    def __getitem__(self, mcs: int) -> McsEntry:
        return self.entries[check_mcs(mcs)]

    def efficiencies(self) -> list[float]:
        """CR * BPMS for MCS 1..27 (position k holds MCS k + 1)."""
        return [self.entries[m].efficiency for m in range(1, MAX_MCS + 1)]

    @classmethod
    def from_json(cls, doc: list[dict]) -> "McsTable":
        rows = sorted(doc, key=lambda r: r["index"])
        return cls(
            McsEntry(int(r["index"]), int(r["bits_per_symbol"]), float(r["coding_rate_x1024"]))
            for r in rows
        )

    @classmethod
    def load(cls, path: str | Path | None = None) -> "McsTable":
        if path is None:
            text = resources.files("qosmc.data").joinpath("mcs_table.json").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_json(json.loads(text))

    def to_json(self) -> list[dict]:
        return [
            {"index": e.index, "bits_per_symbol": e.bits_per_symbol, "coding_rate_x1024": e.coding_rate_x1024}
            for e in self.entries
        ]


_DEFAULT_TABLE: McsTable | None = None


def default_mcs_table() -> McsTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = McsTable.load()
    return _DEFAULT_TABLE


def check_mcs(mcs: int) -> int:
    try:
        value = operator.index(mcs)
    except TypeError:
        raise ValueError(f"MCS index must be an integer, got {mcs!r}") from None
    if isinstance(mcs, bool) or not 1 <= value <= MAX_MCS:
        raise ValueError(f"MCS index must be in 1..{MAX_MCS}, got {mcs!r}")
    return value


def slot_count(t: float, mu: int) -> int:
    """Number of slots of numerology ``mu`` in ``t`` seconds (floored)."""
    if not t > 0:
        raise ValueError(f"interval must be positive, got {t!r}")
    # 2**mu * 1000 is an exact integer, so this only floors genuine fractions
    return math.floor(t * (2 ** check_numerology(mu) * 1000) + 1e-9)


def transport_block_bits(alrb: int, coding_rate: float, bits_per_symbol: int) -> int:
    if alrb < 0:
        raise ValueError("allocated RBs must be nonnegative")
    return math.floor(RE_PER_RB * alrb * coding_rate * bits_per_symbol)


def tbs_bits(alrb: int, mcs: int, table: McsTable | None = None) -> int:
    """Transport block payload in bits for ``alrb`` RBs at ``mcs``."""
    entry = (table or default_mcs_table())[mcs]
    if alrb < 0:
        raise ValueError("allocated RBs must be nonnegative")
    # x1024 * 156 * alrb * bpms is exact in binary floating point for table rates
    return math.floor(RE_PER_RB * alrb * entry.bits_per_symbol * entry.coding_rate_x1024 / 1024)


def gnb_rate(bler_per_slot: Sequence[float], tbs_per_slot: Sequence[float], t: float) -> float:
    """Expected goodput of one gNB over ``t`` seconds given per-slot BLER and TB sizes."""
    if len(bler_per_slot) != len(tbs_per_slot):
        raise ValueError(
            f"BLER and TBS sequences differ in length ({len(bler_per_slot)} vs {len(tbs_per_slot)})"
        )
    if not t > 0:
        raise ValueError("interval must be positive")
    total = 0.0
    for bler, tbs in zip(bler_per_slot, tbs_per_slot):
        if not 0.0 <= bler <= 1.0:
            raise ValueError(f"BLER outside [0, 1]: {bler!r}")
        total += (1.0 - bler) * tbs
    return total / t


def total_rate(per_gnb_rates: Sequence[float]) -> float:
    return float(sum(per_gnb_rates))


def consumed_bandwidth(alrb: float, mu: int) -> float:
    """Occupied bandwidth in Hz of ``alrb`` RBs at numerology ``mu``."""
    if alrb < 0:
        raise ValueError("allocated RBs must be nonnegative")
    return alrb * SUBCARRIERS_PER_RB * subcarrier_spacing(mu)


def cluster_bandwidth(alrbs: Sequence[float], mus: Sequence[int], connected: Sequence[int] | None = None) -> float:
    """Sum of occupied bandwidth over connected gNBs (``connected`` is the 0/1 CON vector)."""
    if connected is None:
        connected = [1] * len(alrbs)
    return sum(c * consumed_bandwidth(a, m) for a, m, c in zip(alrbs, mus, connected))


def spectrum_efficiency(dr: float, cbw: float) -> float:
    if cbw == 0:
        if dr == 0:
            return 0.0
        raise ValueError("nonzero rate over zero bandwidth")
    if cbw < 0:
        raise ValueError("bandwidth must be nonnegative")
    return dr / cbw


def min_latency(mu: int) -> float:
    """Decode on the first attempt: two slots."""
    return 2 / 2 ** check_numerology(mu) * 1e-3


def max_latency(mu: int) -> float:
    """Decode after the third retransmission: eight slots."""
    return 8 / 2 ** check_numerology(mu) * 1e-3
