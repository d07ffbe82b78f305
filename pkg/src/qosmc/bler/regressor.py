"""Feed-forward BLER regression network (numpy, trained with Adam)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..channel import NotReadyError
from ..radio import MAX_MCS, NUMEROLOGIES

SCHEMA = "qosmc.bler_regressor/1"
N_POWER_LEVELS = 3


def encode_features(labels, mus, power_levels, mcs, n_clusters: int) -> np.ndarray:
    """One-hot label, numerology and power level, plus the MCS index scaled to [0, 1]."""
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    n = len(labels)
    mus = np.broadcast_to(np.asarray(mus, dtype=int), (n,))
    power_levels = np.broadcast_to(np.asarray(power_levels, dtype=int), (n,))
    mcs = np.broadcast_to(np.asarray(mcs, dtype=float), (n,))
    width = n_clusters + len(NUMEROLOGIES) + N_POWER_LEVELS + 1
    x = np.zeros((n, width))
    rows = np.arange(n)
    x[rows, np.clip(labels, 0, n_clusters - 1)] = 1.0
    x[rows, n_clusters + np.clip(mus, 0, len(NUMEROLOGIES) - 1)] = 1.0
    x[rows, n_clusters + len(NUMEROLOGIES) + np.clip(power_levels, 0, N_POWER_LEVELS - 1)] = 1.0
    x[:, -1] = (mcs - 1.0) / (MAX_MCS - 1)
    return x


@dataclass
class BlerRegressor:
    n_clusters: int
    hidden: tuple[int, ...] = (64, 64)
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    @property
    def input_width(self) -> int:
        return self.n_clusters + len(NUMEROLOGIES) + N_POWER_LEVELS + 1

    @property
    def trained(self) -> bool:
        return bool(self.weights)

    def init(self, rng: np.random.Generator) -> "BlerRegressor":
        sizes = [self.input_width, *self.hidden, 1]
        self.weights = [rng.normal(0.0, np.sqrt(1.0 / a), size=(a, b)) for a, b in zip(sizes, sizes[1:])]
        self.biases = [np.zeros(b) for b in sizes[1:]]
        return self

    def _forward(self, x: np.ndarray):
        acts = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ w + b)
            acts.append(h)
        z = h @ self.weights[-1] + self.biases[-1]
        return acts, expit(z[:, 0])

    def predict_encoded(self, x: np.ndarray) -> np.ndarray:
        if not self.trained:
            raise NotReadyError("regressor has not been trained")
        return self._forward(np.asarray(x, dtype=float))[1]

    def predict(self, labels, mus, power_levels, mcs) -> np.ndarray:
        return self.predict_encoded(encode_features(labels, mus, power_levels, mcs, self.n_clusters))

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA,
            "n_clusters": self.n_clusters,
            "hidden": list(self.hidden),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "BlerRegressor":
        if doc.get("schema") != SCHEMA:
            raise ValueError(f"unsupported regressor schema {doc.get('schema')!r}")
        return cls(
            int(doc["n_clusters"]), tuple(doc["hidden"]),
            [np.asarray(w, dtype=float) for w in doc["weights"]],
            [np.asarray(b, dtype=float) for b in doc["biases"]],
        )


@dataclass
class TrainReport:
    train_mse: list[float]
    test_mae: float
    test_within_005: float
    n_train: int
    n_test: int

    def to_json(self) -> dict:
        return {"train_mse": self.train_mse, "test_mae": self.test_mae,
                "test_within_0.05": self.test_within_005, "n_train": self.n_train, "n_test": self.n_test}


def gradients(reg: BlerRegressor, x: np.ndarray, y: np.ndarray) -> list[np.ndarray]:
    """Gradient of the batch mean squared error, weights first then biases."""
    acts, out = reg._forward(x)
    # d(mean sq err)/d(pre-sigmoid)
    delta = ((2.0 / len(x)) * (out - y) * out * (1.0 - out))[:, None]
    n_layers = len(reg.weights)
    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    for layer in range(n_layers - 1, -1, -1):
        grads_w[layer] = acts[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer:
            delta = (delta @ reg.weights[layer].T) * (1.0 - acts[layer] ** 2)
    return grads_w + grads_b


def fit(reg: BlerRegressor, x: np.ndarray, y: np.ndarray, rng: np.random.Generator, *,
        epochs: int = 50, batch_size: int = 128, lr: float = 3e-3, clip_norm: float = 1.0) -> list[float]:
    """Mini-batch Adam on mean squared error; returns the per-epoch training MSE."""
    params = reg.weights + reg.biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch_size):
            idx = order[start:start + batch_size]
            grads = gradients(reg, x[idx], y[idx])
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
            if norm > clip_norm:
                grads = [g * (clip_norm / norm) for g in grads]
            step += 1
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= b1
                mi += (1 - b1) * g
                vi *= b2
                vi += (1 - b2) * g * g
                p -= lr * (mi / (1 - b1 ** step)) / (np.sqrt(vi / (1 - b2 ** step)) + eps)
        history.append(float(np.mean((reg._forward(x)[1] - y) ** 2)))
    return history
