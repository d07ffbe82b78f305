"""Ground-truth BLER curves standing in for a link-level simulator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..radio import MAX_MCS, check_mcs, check_numerology

MCS_INDICES = np.arange(1, MAX_MCS + 1)


def default_snr50() -> tuple[float, ...]:
    return tuple(-4.0 + 1.1 * (m - 1) for m in range(1, MAX_MCS + 1))


@dataclass(frozen=True)
class BlerOracleParams:
    """Logistic BLER curve per MCS: 50 % point, slope, and a per-numerology shift."""

    snr50: tuple[float, ...] = field(default_factory=default_snr50)
    slope: float = 1.0
    numerology_penalty_db: float = 0.5

    def __post_init__(self):
        if len(self.snr50) != MAX_MCS:
            raise ValueError(f"need {MAX_MCS} snr50 values")
        if any(b <= a for a, b in zip(self.snr50, self.snr50[1:])):
            raise ValueError("snr50 must be strictly increasing in MCS")
        if not self.slope > 0:
            raise ValueError("slope must be positive")

    def thresholds(self, mu: int) -> np.ndarray:
        """Effective 50 % SNR for MCS 1..27 at numerology ``mu``."""
        return np.asarray(self.snr50) + self.numerology_penalty_db * check_numerology(mu)

    def to_json(self) -> dict:
        return {"snr50": list(self.snr50), "slope": self.slope,
                "numerology_penalty_db": self.numerology_penalty_db}

    @classmethod
    def from_json(cls, doc: dict) -> "BlerOracleParams":
        return cls(tuple(doc.get("snr50", default_snr50())), float(doc.get("slope", 1.0)),
                   float(doc.get("numerology_penalty_db", 0.5)))


def oracle_bler(snr: float, mcs: int, mu: int, params: BlerOracleParams | None = None) -> float:
    params = params or BlerOracleParams()
    thr = params.snr50[check_mcs(mcs) - 1] + params.numerology_penalty_db * check_numerology(mu)
    return float(expit(-params.slope * (snr - thr)))


def oracle_curve(snr, mu: int, params: BlerOracleParams | None = None) -> np.ndarray:
    """BLER for every MCS; ``snr`` may be an array, the MCS axis is appended last."""
    params = params or BlerOracleParams()
    snr = np.asarray(snr, dtype=float)[..., None]
    return expit(-params.slope * (snr - params.thresholds(mu)))


# log-gain grid for averaging over unit-mean exponential fading
_U = np.linspace(-30.0, 4.0, 3401)
_DENSITY = np.exp(_U - np.exp(_U))
_W = np.full(_U.shape, _U[1] - _U[0]) * _DENSITY
_W[[0, -1]] *= 0.5
_W /= _W.sum()
_GAIN_DB = 10.0 * _U / np.log(10.0)


def faded_curve(snr, mu: int, params: BlerOracleParams | None = None) -> np.ndarray:
    """Mean BLER per MCS when the slot SNR is ``snr`` plus Rayleigh power fading."""
    params = params or BlerOracleParams()
    snr = np.asarray(snr, dtype=float)
    inst = snr[..., None, None] + _GAIN_DB  # (..., 1, grid)
    thr = params.thresholds(mu)[:, None]
    return expit(-params.slope * (inst - thr)) @ _W


def faded_bler(snr: float, mcs: int, mu: int, params: BlerOracleParams | None = None) -> float:
    return float(faded_curve(snr, mu, params)[check_mcs(mcs) - 1])
