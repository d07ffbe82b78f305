"""Signal-side ground truth: geometry, mobility, path loss, SNR and CQI reports."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .radio import SUBCARRIERS_PER_RB, check_numerology, subcarrier_spacing

THERMAL_NOISE_DBM_HZ = -174.0
POWER_STEP_DB = 3.0
POWER_LEVELS = (0, 1, 2)
CQI_MAX = 15


class NotReadyError(RuntimeError):
    """Raised when a model or history is consumed before it is usable."""


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    def distance(self, other: "Position") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class GnbProfile:
    id: int
    position: Position
    numerology: int
    carrier_class: str = "small"  # "macro" (sub-7 GHz) or "small" (FR2)
    carrier_ghz: float = 25.0
    max_power_dbm: float = 29.0
    power_level: int = 0
    total_rbs: int = 66
    pl_exponent: float = 3.2
    shadowing_sigma_db: float = 7.0
    antenna_gain_db: float = 0.0
    noise_figure_db: float = 7.0

    def __post_init__(self):
        check_numerology(self.numerology)
        if self.carrier_class not in ("macro", "small"):
            raise ValueError(f"unknown carrier class {self.carrier_class!r}")
        if self.power_level not in POWER_LEVELS:
            raise ValueError(f"power level must be one of {POWER_LEVELS}")
        if self.total_rbs <= 0:
            raise ValueError("total_rbs must be positive")

    @property
    def bandwidth_hz(self) -> float:
        return self.total_rbs * SUBCARRIERS_PER_RB * subcarrier_spacing(self.numerology)

    def tx_power_dbm(self, power_level: int | None = None) -> float:
        level = self.power_level if power_level is None else power_level
        if level not in POWER_LEVELS:
            raise ValueError(f"power level must be one of {POWER_LEVELS}")
        return self.max_power_dbm - POWER_STEP_DB * level


def macro_gnb(id: int, position: Position, **kw) -> GnbProfile:
    params = dict(numerology=0, carrier_class="macro", carrier_ghz=3.5, max_power_dbm=49.0,
                  pl_exponent=2.8, shadowing_sigma_db=4.0)
    params.update(kw)
    return GnbProfile(id, position, **params)


def small_gnb(id: int, position: Position, numerology: int, **kw) -> GnbProfile:
    params = dict(carrier_class="small", carrier_ghz=25.0, max_power_dbm=29.0,
                  pl_exponent=3.2, shadowing_sigma_db=7.0)
    params.update(kw)
    return GnbProfile(id, position, numerology, **params)


# --- mobility -----------------------------------------------------------------

@dataclass(frozen=True)
class MobilityState:
    position: Position
    waypoint: Position
    speed: float


def _uniform_position(area: float, rng: np.random.Generator) -> Position:
    x, y = rng.uniform(0.0, area, size=2)
    return Position(float(x), float(y))


def initial_mobility(area: float, rng: np.random.Generator,
                     speed_range: tuple[float, float] = (0.5, 3.0)) -> MobilityState:
    pos = _uniform_position(area, rng)
    return MobilityState(pos, _uniform_position(area, rng), float(rng.uniform(*speed_range)))


def step_mobility(state: MobilityState, dt: float, area: float, rng: np.random.Generator,
                  speed_range: tuple[float, float] = (0.5, 3.0)) -> MobilityState:
    """Random-waypoint step: walk toward the waypoint, redraw waypoint and speed on arrival."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    pos, wp = state.position, state.waypoint
    travel = state.speed * dt
    remaining = pos.distance(wp)
    if travel <= 0:
        return state
    if travel >= remaining:
        # arrival ends the step; the leftover travel time is dropped
        return MobilityState(wp, _uniform_position(area, rng), float(rng.uniform(*speed_range)))
    frac = travel / remaining
    nx = pos.x + (wp.x - pos.x) * frac
    ny = pos.y + (wp.y - pos.y) * frac
    nx = min(max(nx, 0.0), area)
    ny = min(max(ny, 0.0), area)
    return replace(state, position=Position(nx, ny))


# --- propagation --------------------------------------------------------------

def reference_loss_db(carrier_ghz: float) -> float:
    """Free-space-like intercept at 1 m."""
    return 32.4 + 20.0 * math.log10(carrier_ghz)


def path_loss_db(gnb: GnbProfile, ue: Position, shadowing_db: float = 0.0) -> float:
    d = max(gnb.position.distance(ue), 1.0)
    return reference_loss_db(gnb.carrier_ghz) + 10.0 * gnb.pl_exponent * math.log10(d) + shadowing_db


class ShadowingField:
    """Spatially correlated lognormal shadowing for one gNB.

    Independent N(0, sigma^2) values on a square grid with the decorrelation
    distance as spacing, bilinearly interpolated in between.
    """

    def __init__(self, sigma_db: float, area: float, rng: np.random.Generator,
                 decorrelation_m: float = 25.0):
        if decorrelation_m <= 0:
            raise ValueError("decorrelation distance must be positive")
        self.spacing = decorrelation_m
        n = int(math.ceil(area / decorrelation_m)) + 2
        self.grid = rng.normal(0.0, sigma_db, size=(n, n)) if sigma_db > 0 else np.zeros((n, n))

    def __call__(self, pos: Position) -> float:
        gx = min(max(pos.x / self.spacing, 0.0), self.grid.shape[0] - 1.000001)
        gy = min(max(pos.y / self.spacing, 0.0), self.grid.shape[1] - 1.000001)
        i, j = int(gx), int(gy)
        fx, fy = gx - i, gy - j
        g = self.grid
        return float(
            g[i, j] * (1 - fx) * (1 - fy) + g[i + 1, j] * fx * (1 - fy)
            + g[i, j + 1] * (1 - fx) * fy + g[i + 1, j + 1] * fx * fy
        )


def noise_floor_dbm(bandwidth_hz: float, noise_figure_db: float = 7.0) -> float:
    return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(bandwidth_hz) + noise_figure_db


def snr_db(gnb: GnbProfile, pl: float, power_level: int | None = None,
           bandwidth_hz: float | None = None) -> float:
    """Wideband SNR over the gNB's full carrier (or ``bandwidth_hz`` if given)."""
    bw = gnb.bandwidth_hz if bandwidth_hz is None else bandwidth_hz
    return gnb.tx_power_dbm(power_level) + gnb.antenna_gain_db - pl - noise_floor_dbm(bw, gnb.noise_figure_db)


# --- CQI ----------------------------------------------------------------------

DEFAULT_CQI_THRESHOLDS = tuple(-6.0 + 2.0 * k for k in range(16))


def snr_to_cqi(snr: float, thresholds: Sequence[float] = DEFAULT_CQI_THRESHOLDS) -> int:
    """Quantize SNR to CQI 0..15; ``thresholds[k]`` is the lower edge of bin k."""
    if len(thresholds) != 16:
        raise ValueError("need exactly 16 CQI thresholds")
    k = int(np.searchsorted(thresholds, snr, side="right")) - 1
    return min(max(k, 0), CQI_MAX)


def cqi_to_snr(cqi: int, thresholds: Sequence[float] = DEFAULT_CQI_THRESHOLDS) -> float:
    """Representative SNR of a CQI bin (midpoint; open end bins use the bin width)."""
    if not 0 <= cqi <= CQI_MAX:
        raise ValueError("CQI must be in 0..15")
    width = thresholds[1] - thresholds[0]
    if cqi == CQI_MAX:
        return thresholds[CQI_MAX] + width / 2
    return (thresholds[cqi] + thresholds[cqi + 1]) / 2


@dataclass
class CqiHistory:
    """The last ``length`` CQI reports of one gNB, newest last."""

    length: int = 20
    values: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("history length must be positive")
        self.values = deque(self.values, maxlen=self.length)

    def push(self, cqi: int) -> "CqiHistory":
        if not 0 <= cqi <= CQI_MAX:
            raise ValueError(f"CQI out of range: {cqi}")
        self.values.append(int(cqi))
        return self

    def extend(self, cqis: Iterable[int]) -> "CqiHistory":
        for c in cqis:
            self.push(c)
        return self

    @property
    def warm(self) -> bool:
        return len(self.values) == self.length

    @property
    def latest(self) -> int:
        if not self.values:
            raise NotReadyError("empty CQI history")
        return self.values[-1]

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(self.values)

    def as_array(self) -> np.ndarray:
        if not self.warm:
            raise NotReadyError(f"CQI history has {len(self.values)} of {self.length} samples")
        return np.asarray(self.values, dtype=float)


def push_cqi(hist: CqiHistory, cqi: int) -> CqiHistory:
    return hist.push(cqi)


def rayleigh_fading_db(rng: np.random.Generator, size) -> np.ndarray:
    """Per-slot power fading in dB, exponential with unit mean in linear scale."""
    gain = rng.exponential(1.0, size=size)
    return 10.0 * np.log10(np.maximum(gain, 1e-30))
