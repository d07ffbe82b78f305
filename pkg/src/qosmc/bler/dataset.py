"""Labelled BLER training rows generated from the oracle plus fading."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..channel import (
    POWER_LEVELS, MobilityState, Position, ShadowingField, path_loss_db, rayleigh_fading_db,
    snr_db, snr_to_cqi, step_mobility,
)
from ..config import ScenarioConfig
from ..radio import MAX_MCS
from .oracle import MCS_INDICES, oracle_curve


@dataclass
class TrainingSet:
    cqi: np.ndarray  # (rows, CHL) int
    mu: np.ndarray
    power_level: np.ndarray
    mcs: np.ndarray
    bler: np.ndarray
    snr: np.ndarray  # true wideband SNR behind each row; not persisted

    def __len__(self) -> int:
        return len(self.bler)

    @property
    def history_length(self) -> int:
        return self.cqi.shape[1]

    def subset(self, idx) -> "TrainingSet":
        return TrainingSet(self.cqi[idx], self.mu[idx], self.power_level[idx], self.mcs[idx],
                           self.bler[idx], self.snr[idx])

    def header(self) -> list[str]:
        return [f"cqi_{k}" for k in range(self.history_length)] + ["mu", "power_level", "mcs", "bler"]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for i in range(len(self)):
                w.writerow([*map(int, self.cqi[i]), int(self.mu[i]), int(self.power_level[i]),
                            int(self.mcs[i]), f"{self.bler[i]:.6g}"])

    @classmethod
    def read_csv(cls, path: str | Path) -> "TrainingSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty dataset")
        header, body = rows[0], rows[1:]
        chl = sum(1 for h in header if h.startswith("cqi_"))
        expected = [f"cqi_{k}" for k in range(chl)] + ["mu", "power_level", "mcs", "bler"]
        if header != expected:
            raise ValueError(f"{path}: unexpected header {header}")
        data = np.array(body, dtype=float).reshape(len(body), len(header))
        return cls(data[:, :chl].astype(int), data[:, chl].astype(int), data[:, chl + 1].astype(int),
                   data[:, chl + 2].astype(int), data[:, chl + 3], np.full(len(body), np.nan))


def _trajectory_snrs(gnb, start: Position, cfg: ScenarioConfig, power_level: int,
                     shadow: ShadowingField, rng: np.random.Generator) -> np.ndarray:
    state = MobilityState(start, Position(*rng.uniform(0.0, cfg.area_m, size=2)),
                          float(rng.uniform(*cfg.speed_range)))
    out = np.empty(cfg.cqi_history_length)
    for k in range(cfg.cqi_history_length):
        if k:
            state = step_mobility(state, cfg.epoch_s, cfg.area_m, rng, cfg.speed_range)
        pos = state.position
        out[k] = snr_db(gnb, path_loss_db(gnb, pos, shadow(pos)), power_level)
    return out


def generate_training_set(cfg: ScenarioConfig, rng: np.random.Generator, *,
                          numerologies=None, positions_per_setting: int | None = None,
                          slot_trials: int | None = None, fading: bool | None = None) -> TrainingSet:
    """One CQI trajectory per (numerology, power level, position), expanded over all MCS.

    Each row's BLER is the failure fraction over ``slot_trials`` independent
    slots at the trajectory's final SNR.
    """
    tc = cfg.training
    numerologies = tuple(tc.numerologies if numerologies is None else numerologies)
    n_pos = tc.positions_per_setting if positions_per_setting is None else positions_per_setting
    trials = tc.slot_trials if slot_trials is None else slot_trials
    fading = cfg.fading if fading is None else fading
    if not numerologies or n_pos < 1:
        raise ValueError("empty training sweep")
    if trials < 1:
        raise ValueError("need at least one slot trial per row")

    cqi_rows, mus, powers, mcss, blers, snrs = [], [], [], [], [], []
    for mu in numerologies:
        cands = [g for g in cfg.gnbs if g.numerology == mu]
        if not cands:
            raise ValueError(f"scenario has no gNB with numerology {mu}")
        for level in POWER_LEVELS:
            for p in range(n_pos):
                gnb = cands[p % len(cands)]
                shadow = ShadowingField(gnb.shadowing_sigma_db, cfg.area_m, rng, cfg.shadowing_decorrelation_m)
                offset = rng.uniform(-cfg.area_m / 2, cfg.area_m / 2, size=2)
                start = Position(float(np.clip(gnb.position.x + offset[0], 0, cfg.area_m)),
                                 float(np.clip(gnb.position.y + offset[1], 0, cfg.area_m)))
                traj = _trajectory_snrs(gnb, start, cfg, level, shadow, rng)
                cqis = [snr_to_cqi(s, cfg.cqi_thresholds) for s in traj]
                current = traj[-1]
                if fading:
                    inst = current + rayleigh_fading_db(rng, (trials,))
                else:
                    inst = np.full(trials, current)
                p_fail = oracle_curve(inst, mu, cfg.oracle)  # (trials, 27)
                fails = rng.random((trials, MAX_MCS)) < p_fail
                emp = fails.mean(axis=0)
                for m in MCS_INDICES:
                    cqi_rows.append(cqis)
                    mus.append(mu)
                    powers.append(level)
                    mcss.append(int(m))
                    blers.append(float(emp[m - 1]))
                    snrs.append(current)
    return TrainingSet(np.array(cqi_rows, dtype=int), np.array(mus), np.array(powers), np.array(mcss),
                       np.array(blers), np.array(snrs))
