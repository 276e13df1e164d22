"""K-Means trade archetypes in (log_weight, log_value) space."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPECIALTY = "Low Weight / High Value (Specialty)"
BULK = "High Weight / Low Value (Bulk)"
LOW_LOW = "Low Weight / Low Value"
HIGH_HIGH = "High Weight / High Value"


@dataclass(frozen=True)
class KMeansModel:
    k: int
    centroids: np.ndarray
    seed: int
    inertia: float
    iterations_run: int
    labels: np.ndarray = field(repr=False)
    inertia_history: tuple[float, ...] = field(default=(), repr=False)

    def assign(self, point) -> int:
        return assign(self, point)


@dataclass(frozen=True)
class ArchetypeLabel:
    cluster_id: int
    label: str


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(points, points[chosen])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # Fewer distinct points than k; pick uniformly among the rest.
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(points, points[idx : idx + 1])[:, 0])
    return points[chosen].copy()


def _update(points: np.ndarray, labels: np.ndarray, d2: np.ndarray, k: int) -> np.ndarray:
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k)
    if (counts == 0).any():
        # Hand each empty cluster the point currently farthest from its centroid.
        order = np.argsort(-d2, kind="stable")
        taken = 0
        for c in np.flatnonzero(counts == 0):
            while counts[labels[order[taken]]] <= 1:
                taken += 1
            i = order[taken]
            counts[labels[i]] -= 1
            labels[i] = c
            counts[c] = 1
            taken += 1
    sums = np.zeros((k, points.shape[1]))
    np.add.at(sums, labels, points)
    return sums / counts[:, None]


def fit_kmeans(
    points,
    k: int = 4,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> KMeansModel:
    """Lloyd iterations from k-means++ seeds.

    Stops when the largest centroid L2 shift drops below ``tol`` or after
    ``max_iter`` updates. Labels and inertia are taken against the final
    centroids.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2:
        raise ValueError("points must be a 2-D array")
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(X) < k:
        raise ValueError(f"need at least k={k} points, got {len(X)}")
    if not np.isfinite(X).all():
        raise ValueError("points must be finite")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(X, k, rng)
    history: list[float] = []
    iterations = 0
    for _ in range(max_iter):
        d2_all = _sq_dists(X, centroids)
        labels = d2_all.argmin(axis=1)
        d2 = d2_all[np.arange(len(X)), labels]
        history.append(float(d2.sum()))
        new = _update(X, labels, d2, k)
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        iterations += 1
        if shift < tol:
            break

    d2_all = _sq_dists(X, centroids)
    labels = d2_all.argmin(axis=1)
    inertia = float(d2_all[np.arange(len(X)), labels].sum())
    history.append(inertia)
    return KMeansModel(
        k=k,
        centroids=centroids,
        seed=seed,
        inertia=inertia,
        iterations_run=iterations,
        labels=labels,
        inertia_history=tuple(history),
    )


def assign(model: KMeansModel, point) -> int:
    p = np.asarray(point, dtype=float)
    if not np.isfinite(p).all():
        raise ValueError("point must be finite")
    d2 = ((model.centroids - p) ** 2).sum(axis=1)
    return int(d2.argmin())  # first minimum = lowest cluster id


def label_archetypes(
    model: KMeansModel, median_log_weight: float, median_log_value: float
) -> list[ArchetypeLabel]:
    out = []
    for cid, (w, v) in enumerate(model.centroids):
        heavy = w >= median_log_weight
        valuable = v >= median_log_value
        if heavy and valuable:
            label = HIGH_HIGH
        elif heavy:
            label = BULK
        elif valuable:
            label = SPECIALTY
        else:
            label = LOW_LOW
        out.append(ArchetypeLabel(cid, label))
    return out
