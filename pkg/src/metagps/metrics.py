"""Classification and embedding-quality metrics, and the report container."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def accuracy(preds, labels) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    return float(np.mean(preds == labels)) if len(labels) else 0.0


def macro_f1(preds, labels, classes) -> float:
    """Unweighted mean of per-class F1; undefined precision/recall count as 0."""
    preds, labels = np.asarray(preds), np.asarray(labels)
    classes = list(classes)
    if not classes:
        raise ValueError("classes must be nonempty")
    scores = []
    for c in classes:
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    return float(np.mean(scores))


def _pairwise(E: np.ndarray) -> np.ndarray:
    diff = E[:, None, :] - E[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def silhouette(embeddings, labels) -> float:
    """Mean silhouette coefficient with Euclidean distance.

    Points in singleton classes score 0.
    """
    E = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("silhouette needs at least two classes")
    D = _pairwise(E)
    onehot = labels[:, None] == classes[None, :]
    counts = onehot.sum(axis=0)
    sums = D @ onehot
    own = np.searchsorted(classes, labels)
    n = len(labels)
    own_count = counts[own]
    a = np.where(own_count > 1, sums[np.arange(n), own] / np.maximum(own_count - 1, 1), 0.0)
    means = sums / counts
    means[np.arange(n), own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    sc = np.where((own_count > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(sc.mean())


def davies_bouldin(embeddings, labels) -> float:
    E = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("Davies-Bouldin needs at least two classes")
    centroids = np.stack([E[labels == c].mean(axis=0) for c in classes])
    scatter = np.array(
        [np.linalg.norm(E[labels == c] - centroids[i], axis=1).mean() for i, c in enumerate(classes)]
    )
    dist = _pairwise(centroids)
    off = ~np.eye(len(classes), dtype=bool)
    if np.any(dist[off] == 0):
        raise ValueError("two classes have coincident centroids")
    ratio = (scatter[:, None] + scatter[None, :]) / np.where(off, dist, 1.0)
    ratio[~off] = -np.inf
    return float(ratio.max(axis=1).mean())


@dataclass
class MetricsReport:
    accuracy: list
    macro_f1: list
    tasks: list = field(default_factory=list)
    sc: float | None = None
    db: float | None = None
    wall_clock: float | None = None

    @property
    def accuracy_mean(self) -> float:
        return float(np.mean(self.accuracy))

    @property
    def accuracy_std(self) -> float:
        return float(np.std(self.accuracy))

    @property
    def macro_f1_mean(self) -> float:
        return float(np.mean(self.macro_f1))

    @property
    def macro_f1_std(self) -> float:
        return float(np.std(self.macro_f1))

    def to_dict(self, include_tasks: bool = False, include_timing: bool = False) -> dict:
        d = {
            "accuracy": {"per_repeat": self.accuracy, "mean": self.accuracy_mean,
                         "std": self.accuracy_std},
            "macro_f1": {"per_repeat": self.macro_f1, "mean": self.macro_f1_mean,
                         "std": self.macro_f1_std},
            "sc": self.sc,
            "db": self.db,
        }
        if include_tasks:
            d["tasks"] = self.tasks
        if include_timing:
            d["wall_clock"] = self.wall_clock
        return d
