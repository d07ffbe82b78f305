"""K-means labelling of CQI sequences and the nearest-centroid label classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..channel import CqiHistory, NotReadyError

SCHEMA = "qosmc.cqi_clusters/1"


def _sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # explicit differences keep exact zeros for identical vectors
    diff = x[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def nearest(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the closest centroid per row; ties go to the lowest index."""
    return np.argmin(_sq_distances(np.atleast_2d(x), centroids), axis=1)


@dataclass
class CqiClusterModel:
    centroids: np.ndarray
    labels: np.ndarray | None = None
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=float)
        if self.centroids.ndim != 2 or self.n_clusters < 2:
            raise ValueError("need at least two centroids in a 2-D array")

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    @property
    def sequence_length(self) -> int:
        return self.centroids.shape[1]

    def predict(self, sequences) -> np.ndarray:
        x = np.asarray(sequences, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.sequence_length:
            raise ValueError(f"sequence length {x.shape[1]} != {self.sequence_length}")
        return nearest(x, self.centroids)

    def to_json(self) -> dict:
        return {"schema": SCHEMA, "n_clusters": self.n_clusters,
                "centroids": self.centroids.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "CqiClusterModel":
        if doc.get("schema") != SCHEMA:
            raise ValueError(f"unsupported cluster model schema {doc.get('schema')!r}")
        return cls(np.asarray(doc["centroids"], dtype=float))


def cqi_label(model: CqiClusterModel, hist: CqiHistory | np.ndarray) -> int:
    """Cluster label of a warm CQI history."""
    if isinstance(hist, CqiHistory):
        if not hist.warm:
            raise NotReadyError("CQI history is not warm yet")
        seq = hist.as_array()
    else:
        seq = np.asarray(hist, dtype=float)
    return int(model.predict(seq)[0])


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = _sq_distances(x, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers.append(x[idx])
        d2 = np.minimum(d2, _sq_distances(x, x[idx][None, :])[:, 0])
    return np.array(centers)


def kmeans_fit(sequences, n_clusters: int, rng: np.random.Generator,
               tol: float = 1e-6, max_iter: int = 300) -> CqiClusterModel:
    """Lloyd's algorithm from a k-means++ start.

    The returned ``labels`` are the nearest-centroid assignment under the final
    centroids, so relabelling the inputs with the model reproduces them.
    """
    x = np.asarray(sequences, dtype=float)
    if x.ndim != 2:
        raise ValueError("sequences must be a 2-D array")
    if n_clusters < 2:
        raise ValueError("need at least two clusters")
    n_distinct = len(np.unique(x, axis=0))
    if n_distinct < n_clusters:
        raise ValueError(f"{n_distinct} distinct sequences cannot fill {n_clusters} clusters")

    centroids = _kmeans_pp(x, n_clusters, rng)
    inertia = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = _sq_distances(x, centroids)
        labels = np.argmin(d2, axis=1)
        inertia.append(float(d2[np.arange(len(x)), labels].sum()))
        new = np.empty_like(centroids)
        point_d2 = d2[np.arange(len(x)), labels].copy()
        for j in range(n_clusters):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
            else:
                # reseed an empty cluster at the worst-served point
                far = int(np.argmax(point_d2))
                new[j] = x[far]
                point_d2[far] = 0.0
        shift = float(np.max(np.linalg.norm(new - centroids, axis=1)))
        centroids = new
        if shift < tol:
            break

    d2 = _sq_distances(x, centroids)
    labels = np.argmin(d2, axis=1)
    inertia.append(float(d2[np.arange(len(x)), labels].sum()))
    return CqiClusterModel(centroids, labels, inertia, n_iter)


def fit_nearest_centroid(sequences, labels, n_clusters: int,
                         fallback: np.ndarray | None = None) -> CqiClusterModel:
    """Class-mean classifier for cluster labels.

    Classes missing from the training rows take their centroid from ``fallback``.
    """
    x = np.asarray(sequences, dtype=float)
    labels = np.asarray(labels)
    centroids = np.empty((n_clusters, x.shape[1]))
    for j in range(n_clusters):
        members = labels == j
        if members.any():
            centroids[j] = x[members].mean(axis=0)
        elif fallback is not None:
            centroids[j] = fallback[j]
        else:
            raise ValueError(f"class {j} has no training rows and no fallback centroid")
    return CqiClusterModel(centroids)


def confusion_matrix(true, pred, n_classes: int) -> np.ndarray:
    m = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(m, (np.asarray(true), np.asarray(pred)), 1)
    return m
