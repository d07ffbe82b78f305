"""Scenario configuration and its JSON form."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .bler.oracle import BlerOracleParams
from .channel import DEFAULT_CQI_THRESHOLDS, GnbProfile, Position
from .radio import McsTable, default_mcs_table
from .selector import QosRequirement, SelectorConfig

SCHEMA = "qosmc.scenario/1"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrafficConfig:
    model: str = "full_buffer"  # or "cbr"
    packet_size_bytes: int = 1500
    offered_rate_factor: float = 1.0  # cbr only: offered rate = factor * rate_req

    def __post_init__(self):
        if self.model not in ("full_buffer", "cbr"):
            raise ConfigError(f"unknown traffic model {self.model!r}")
        if self.packet_size_bytes <= 0 or self.offered_rate_factor <= 0:
            raise ConfigError("packet size and offered rate factor must be positive")


@dataclass(frozen=True)
class LoadConfig:
    max_occupied: int = 40
    step: int = 5
    period_s: float = 0.1


@dataclass(frozen=True)
class TrainingConfig:
    numerologies: tuple[int, ...] = (0, 2, 3)
    positions_per_setting: int = 100
    slot_trials: int = 400
    n_clusters: int = 40
    cluster_sweep: tuple[int, ...] = (20, 30, 40, 50)
    train_fraction: float = 0.7
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 3e-3
    hidden: tuple[int, ...] = (64, 64)
    seed: int = 2024


@dataclass(frozen=True)
class ScenarioConfig:
    gnbs: tuple[GnbProfile, ...]
    area_m: float = 1000.0
    duration_s: float = 600.0
    fast_duration_s: float = 10.0
    epoch_s: float = 0.1
    cqi_history_length: int = 20
    speed_range: tuple[float, float] = (0.5, 3.0)
    shadowing_decorrelation_m: float = 25.0
    fading: bool = True
    cqi_thresholds: tuple[float, ...] = DEFAULT_CQI_THRESHOLDS
    oracle: BlerOracleParams = field(default_factory=BlerOracleParams)
    qos: QosRequirement = field(default_factory=QosRequirement)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    load: LoadConfig = field(default_factory=LoadConfig)
    max_cluster_size: int = 4
    literal_reliability_score: bool = False
    enforce_constraints: bool = True
    allocation_headroom: float = 1.05  # RBs are sized for headroom * offered rate
    training: TrainingConfig = field(default_factory=TrainingConfig)
    repetitions: int = 10
    seeds: tuple[int, ...] = tuple(range(10))
    mcs_table_path: str | None = None

    def __post_init__(self):
        if not self.gnbs:
            raise ConfigError("scenario needs at least one gNB")
        if len({g.id for g in self.gnbs}) != len(self.gnbs):
            raise ConfigError("gNB ids must be unique")
        if not self.duration_s > 0 or not self.epoch_s > 0:
            raise ConfigError("duration and epoch must be positive")
        if not self.allocation_headroom >= 1.0:
            raise ConfigError("allocation_headroom must be at least 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        for g in self.gnbs:
            p = g.position
            if not (0 <= p.x <= self.area_m and 0 <= p.y <= self.area_m):
                raise ConfigError(f"gNB {g.id} lies outside the area")
        if self.load.max_occupied > min(g.total_rbs for g in self.gnbs):
            raise ConfigError("background load may not exceed a gNB's RBs")

    def selector_config(self) -> SelectorConfig:
        return SelectorConfig(self.max_cluster_size, self.literal_reliability_score, self.epoch_s, self.enforce_constraints)

    def mcs_table(self) -> McsTable:
        return McsTable.load(self.mcs_table_path) if self.mcs_table_path else default_mcs_table()

    def fast(self) -> "ScenarioConfig":
        return replace(self, duration_s=self.fast_duration_s)


_CLASS_DEFAULTS = {
    "macro": dict(carrier_ghz=3.5, max_power_dbm=49.0, pl_exponent=2.8, shadowing_sigma_db=4.0,
                  antenna_gain_db=0.0),
    "small": dict(carrier_ghz=25.0, max_power_dbm=29.0, pl_exponent=3.2, shadowing_sigma_db=7.0,
                  antenna_gain_db=0.0),
}

_GNB_KEYS = ("carrier_ghz", "max_power_dbm", "power_level", "total_rbs", "pl_exponent",
             "shadowing_sigma_db", "antenna_gain_db", "noise_figure_db")


def _gnb_from_json(doc: dict, class_defaults: dict) -> GnbProfile:
    cls = doc.get("class", "small")
    if cls not in _CLASS_DEFAULTS:
        raise ConfigError(f"gNB {doc.get('id')}: unknown class {cls!r}")
    params = dict(_CLASS_DEFAULTS[cls])
    params.update(class_defaults.get(cls, {}))
    params.update({k: doc[k] for k in _GNB_KEYS if k in doc})
    try:
        return GnbProfile(int(doc["id"]), Position(float(doc["x"]), float(doc["y"])), int(doc["numerology"]),
                          carrier_class=cls, **params)
    except KeyError as exc:
        raise ConfigError(f"gNB entry missing field {exc}") from None


def from_json(doc: dict) -> ScenarioConfig:
    if doc.get("schema", SCHEMA) != SCHEMA:
        raise ConfigError(f"unsupported scenario schema {doc.get('schema')!r}")
    try:
        class_defaults = doc.get("gnb_defaults", {})
        gnbs = tuple(_gnb_from_json(g, class_defaults) for g in doc["gnbs"])
        qos = doc.get("qos", {})
        ch = doc.get("channel", {})
        sel = doc.get("selector", {})
        kw = dict(
            gnbs=gnbs,
            qos=QosRequirement(
                float(qos.get("rate_req_bps", 150e6)), float(qos.get("rel_req", 0.99)),
                float(qos.get("lat_req_s", 0.4e-3)), tuple(qos.get("weights", (0.25,) * 4)),
            ),
            traffic=TrafficConfig(**doc.get("traffic", {})),
            load=LoadConfig(**doc.get("background_load", {})),
            oracle=BlerOracleParams.from_json(doc.get("oracle", {})),
            training=_training_from_json(doc.get("training", {})),
        )
        for key in ("area_m", "duration_s", "fast_duration_s", "epoch_s", "repetitions", "mcs_table_path"):
            if key in doc:
                kw[key] = doc[key]
        if "seeds" in doc:
            kw["seeds"] = tuple(int(s) for s in doc["seeds"])
        for key in ("cqi_history_length", "shadowing_decorrelation_m", "fading"):
            if key in ch:
                kw[key] = ch[key]
        if "speed_range" in ch:
            kw["speed_range"] = tuple(ch["speed_range"])
        if "cqi_thresholds" in ch:
            kw["cqi_thresholds"] = tuple(ch["cqi_thresholds"])
        for key in ("max_cluster_size", "literal_reliability_score", "enforce_constraints", "allocation_headroom"):
            if key in sel:
                kw[key] = sel[key]
        if "epoch_s" in sel:
            kw["epoch_s"] = sel["epoch_s"]
        return ScenarioConfig(**kw)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc


def _training_from_json(doc: dict) -> TrainingConfig:
    doc = dict(doc)
    for key in ("numerologies", "cluster_sweep", "hidden"):
        if key in doc:
            doc[key] = tuple(doc[key])
    return TrainingConfig(**doc)


def to_json(cfg: ScenarioConfig) -> dict:
    return {
        "schema": SCHEMA,
        "area_m": cfg.area_m,
        "duration_s": cfg.duration_s,
        "fast_duration_s": cfg.fast_duration_s,
        "epoch_s": cfg.epoch_s,
        "repetitions": cfg.repetitions,
        "seeds": list(cfg.seeds),
        "mcs_table_path": cfg.mcs_table_path,
        "gnbs": [
            {"id": g.id, "x": g.position.x, "y": g.position.y, "class": g.carrier_class,
             "numerology": g.numerology, **{k: getattr(g, k) for k in _GNB_KEYS}}
            for g in cfg.gnbs
        ],
        "qos": {"rate_req_bps": cfg.qos.rate_req, "rel_req": cfg.qos.rel_req,
                "lat_req_s": cfg.qos.lat_req, "weights": list(cfg.qos.weights)},
        "traffic": copy.copy(cfg.traffic.__dict__),
        "background_load": copy.copy(cfg.load.__dict__),
        "channel": {"cqi_history_length": cfg.cqi_history_length, "speed_range": list(cfg.speed_range),
                    "shadowing_decorrelation_m": cfg.shadowing_decorrelation_m, "fading": cfg.fading,
                    "cqi_thresholds": list(cfg.cqi_thresholds)},
        "selector": {"max_cluster_size": cfg.max_cluster_size, "literal_reliability_score": cfg.literal_reliability_score,
                     "enforce_constraints": cfg.enforce_constraints,
                     "allocation_headroom": cfg.allocation_headroom},
        "oracle": cfg.oracle.to_json(),
        "training": {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.training.__dict__.items()},
    }


def load(path: str | Path | None = None) -> ScenarioConfig:
    """Load a scenario file; ``None`` gives the shipped default scenario."""
    if path is None:
        text = resources.files("qosmc.data").joinpath("default_scenario.json").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario is not valid JSON: {exc}") from exc
    return from_json(doc)


def default_scenario() -> ScenarioConfig:
    return load(None)
