"""Training pipeline and the BLER estimators the selector consumes."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..channel import DEFAULT_CQI_THRESHOLDS, NotReadyError, cqi_to_snr
from ..config import TrainingConfig
from ..radio import MAX_MCS
from ..selector import GnbSnapshot
from . import regressor as regmod
from .dataset import TrainingSet
from .kmeans import CqiClusterModel, confusion_matrix, fit_nearest_centroid, kmeans_fit
from .oracle import MCS_INDICES, BlerOracleParams, faded_curve, oracle_curve

log = logging.getLogger(__name__)

MIN_ROWS = 500


@dataclass
class BlerModel:
    """CQI-history classifier plus BLER regressor, with an oracle fallback for cold gNBs."""

    classifier: CqiClusterModel
    regressor: regmod.BlerRegressor
    oracle: BlerOracleParams = field(default_factory=BlerOracleParams)
    cqi_thresholds: tuple[float, ...] = DEFAULT_CQI_THRESHOLDS
    fading: bool = True

    def label(self, history) -> int:
        return int(self.classifier.predict(np.asarray(history, dtype=float))[0])

    def estimate_bler(self, label: int, mu: int, power_level: int, mcs) -> np.ndarray:
        return self.regressor.predict(np.full(np.size(mcs), label), mu, power_level, np.atleast_1d(mcs))

    def cold_row(self, snap: GnbSnapshot) -> np.ndarray:
        if not snap.cqi_history:
            return np.ones(MAX_MCS)
        snr = cqi_to_snr(snap.cqi_history[-1], self.cqi_thresholds)
        curve = faded_curve if self.fading else oracle_curve
        return curve(snr, snap.numerology, self.oracle)

    def __call__(self, snap: GnbSnapshot) -> np.ndarray:
        if not snap.warm:
            return self.cold_row(snap)
        hist = snap.cqi_history[-snap.history_length:]
        return self.estimate_bler(self.label(hist), snap.numerology, snap.power_level, MCS_INDICES)

    def save(self, directory: str | Path, report: dict | None = None) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        _dump(d / "cqi_classifier.json", self.classifier.to_json())
        _dump(d / "bler_regressor.json", self.regressor.to_json())
        _dump(d / "estimator.json", {"schema": "qosmc.estimator/1", "oracle": self.oracle.to_json(),
                                     "cqi_thresholds": list(self.cqi_thresholds), "fading": self.fading})
        if report is not None:
            _dump(d / "training_report.json", report)

    @classmethod
    def load(cls, directory: str | Path) -> "BlerModel":
        d = Path(directory)
        try:
            meta = json.loads((d / "estimator.json").read_text())
            clf = CqiClusterModel.from_json(json.loads((d / "cqi_classifier.json").read_text()))
            reg = regmod.BlerRegressor.from_json(json.loads((d / "bler_regressor.json").read_text()))
        except FileNotFoundError as exc:
            raise NotReadyError(f"missing model artifact: {exc.filename}") from exc
        return cls(clf, reg, BlerOracleParams.from_json(meta["oracle"]), tuple(meta["cqi_thresholds"]),
                   bool(meta["fading"]))


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


class OracleEstimator:
    """Ground-truth BLER at the snapshot's true SNR (fading-averaged by default)."""

    def __init__(self, params: BlerOracleParams | None = None, fading: bool = True):
        self.params = params or BlerOracleParams()
        self.fading = fading

    def __call__(self, snap: GnbSnapshot) -> np.ndarray:
        if snap.snr_db is None:
            raise NotReadyError(f"gNB {snap.id}: oracle estimator needs the true SNR")
        curve = faded_curve if self.fading else oracle_curve
        return curve(snap.snr_db, snap.numerology, self.params)


class ConstantEstimator:
    def __init__(self, value: float | np.ndarray):
        self.row = np.broadcast_to(np.asarray(value, dtype=float), (MAX_MCS,)).copy()

    def __call__(self, snap: GnbSnapshot) -> np.ndarray:
        return self.row.copy()


# --- training ---------------------------------------------------------------------

def trajectory_groups(ts: TrainingSet) -> np.ndarray:
    """Group id per row: rows sharing CQI sequence, numerology and power level."""
    key = np.column_stack([ts.cqi, ts.mu, ts.power_level])
    _, inverse = np.unique(key, axis=0, return_inverse=True)
    return inverse.ravel()


def split_groups(groups: np.ndarray, train_fraction: float, rng: np.random.Generator):
    ids = np.unique(groups)
    perm = rng.permutation(ids)
    n_train = int(round(train_fraction * len(ids)))
    train_ids = np.zeros(groups.max() + 1, dtype=bool)
    train_ids[perm[:n_train]] = True
    mask = train_ids[groups]
    return np.flatnonzero(mask), np.flatnonzero(~mask)


@dataclass
class ClusterEvaluation:
    n_clusters: int
    accuracy: float
    confusion: np.ndarray
    kmeans: CqiClusterModel
    classifier: CqiClusterModel

    def to_json(self) -> dict:
        return {"n_clusters": self.n_clusters, "accuracy": self.accuracy,
                "kmeans_iterations": self.kmeans.n_iter, "confusion": self.confusion.tolist()}


def evaluate_clusters(ts: TrainingSet, n_clusters: int, train_idx, test_idx,
                      rng: np.random.Generator) -> ClusterEvaluation:
    km = kmeans_fit(ts.cqi, n_clusters, rng)
    clf = fit_nearest_centroid(ts.cqi[train_idx], km.labels[train_idx], n_clusters, fallback=km.centroids)
    pred = clf.predict(ts.cqi[test_idx])
    truth = km.labels[test_idx]
    acc = float(np.mean(pred == truth)) if len(test_idx) else float("nan")
    return ClusterEvaluation(n_clusters, acc, confusion_matrix(truth, pred, n_clusters), km, clf)


@dataclass
class TrainingResult:
    model: BlerModel
    report: regmod.TrainReport
    clusters: dict[int, ClusterEvaluation]

    def to_json(self) -> dict:
        return {
            "schema": "qosmc.training_report/1",
            "n_clusters": self.model.classifier.n_clusters,
            "regressor": self.report.to_json(),
            "classifier": {str(k): v.to_json() for k, v in sorted(self.clusters.items())},
        }


def train_estimator(ts: TrainingSet, tc: TrainingConfig, rng: np.random.Generator, *,
                    oracle: BlerOracleParams | None = None,
                    cqi_thresholds=DEFAULT_CQI_THRESHOLDS, fading: bool = True) -> TrainingResult:
    """Cluster the CQI sequences, fit the label classifier and the BLER regressor."""
    if len(ts) < MIN_ROWS:
        raise ValueError(f"need at least {MIN_ROWS} training rows, got {len(ts)}")
    groups = trajectory_groups(ts)
    train_idx, test_idx = split_groups(groups, tc.train_fraction, rng)

    sweep = sorted(set(tc.cluster_sweep) | {tc.n_clusters})
    clusters = {}
    for k in sweep:
        clusters[k] = evaluate_clusters(ts, k, train_idx, test_idx, rng)
        log.info("k=%d classifier accuracy %.4f", k, clusters[k].accuracy)
    chosen = clusters[tc.n_clusters]

    reg, report = train_regressor(ts, chosen.kmeans.labels, chosen.classifier, train_idx, test_idx, tc, rng)
    model = BlerModel(chosen.classifier, reg, oracle or BlerOracleParams(), tuple(cqi_thresholds), fading)
    return TrainingResult(model, report, clusters)


def train_regressor(ts: TrainingSet, labels: np.ndarray, classifier: CqiClusterModel,
                    train_idx, test_idx, tc: TrainingConfig, rng: np.random.Generator
                    ) -> tuple[regmod.BlerRegressor, regmod.TrainReport]:
    """Fit on cluster labels; score the test rows end to end through ``classifier``."""
    if len(train_idx) < 1:
        raise ValueError("no training rows")
    n_clusters = classifier.n_clusters
    x = regmod.encode_features(labels, ts.mu, ts.power_level, ts.mcs, n_clusters)
    reg = regmod.BlerRegressor(n_clusters, tuple(tc.hidden)).init(rng)
    history = regmod.fit(reg, x[train_idx], ts.bler[train_idx], rng, epochs=tc.epochs,
                         batch_size=tc.batch_size, lr=tc.learning_rate)
    if len(test_idx):
        test_labels = classifier.predict(ts.cqi[test_idx])
        pred = reg.predict(test_labels, ts.mu[test_idx], ts.power_level[test_idx], ts.mcs[test_idx])
        err = np.abs(pred - ts.bler[test_idx])
        mae, within = float(err.mean()), float(np.mean(err <= 0.05))
    else:
        mae = within = float("nan")
    return reg, regmod.TrainReport(history, mae, within, len(train_idx), len(test_idx))
