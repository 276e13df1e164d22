"""Surrogate regression forest and exact interventional Shapley attributions."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FEATURE_NAMES = ("is_vague", "log_value", "log_weight")
MAX_EXACT_FEATURES = 12


@dataclass(frozen=True)
class RegressionTree:
    # Flat node arrays; feature == -1 marks a leaf. Rows go left when x <= threshold.
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        for _ in range(self.depth):
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                break
            a = node[active]
            go_left = X[rows[active], f[active]] <= self.threshold[a]
            node[active] = np.where(go_left, self.left[a], self.right[a])
        return self.value[node]

    @property
    def split_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Largest squared-error reduction; ties go to the lower feature index,
    then the lower threshold."""
    n = len(y)
    total = y.sum()
    parent = total * total / n
    best = None  # (gain, feature, threshold)
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        csum = np.cumsum(ys)[:-1]
        n_left = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        left_sum = csum[valid]
        nl = n_left[valid]
        gain = left_sum**2 / nl + (total - left_sum) ** 2 / (n - nl) - parent
        i = int(np.argmax(gain))  # first max = lowest threshold
        g = float(gain[i])
        if g <= 1e-12 * max(1.0, abs(parent)):
            continue
        if best is None or g > best[0]:
            pos = np.flatnonzero(valid)[i]
            best = (g, f, float((xs[pos] + xs[pos + 1]) / 2))
    return best


def fit_tree(X, y, max_depth: int | None = 6, min_leaf: int = 5) -> RegressionTree:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []
    deepest = 0

    def new_node(idx: np.ndarray) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return len(value) - 1

    root = np.arange(len(y))
    stack = [(new_node(root), root, 0)]
    while stack:
        node, idx, d = stack.pop()
        deepest = max(deepest, d)
        if (max_depth is not None and d >= max_depth) or len(idx) < 2 * min_leaf:
            continue
        ys = y[idx]
        if ys.max() == ys.min():
            continue
        split = _best_split(X[idx], ys, min_leaf)
        if split is None:
            continue
        _, f, t = split
        mask = X[idx, f] <= t
        feature[node] = f
        threshold[node] = t
        l_node = new_node(idx[mask])
        r_node = new_node(idx[~mask])
        left[node] = l_node
        right[node] = r_node
        stack.append((r_node, idx[~mask], d + 1))
        stack.append((l_node, idx[mask], d + 1))

    return RegressionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value),
        depth=deepest,
    )


@dataclass(frozen=True)
class SurrogateForest:
    n_trees: int
    seed: int
    max_depth: int | None
    min_leaf: int
    bootstrap: bool
    trees: tuple[RegressionTree, ...] = field(repr=False)
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(len(X))
        for t in self.trees:
            out += t.predict(X)
        return out / self.n_trees


def fit_surrogate_forest(
    features,
    targets,
    seed: int = 0,
    n_trees: int = 20,
    max_depth: int | None = 6,
    min_leaf: int = 5,
    bootstrap: bool = True,
    feature_names: Sequence[str] = FEATURE_NAMES,
) -> SurrogateForest:
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("features must be 2-D with one row per target")
    if len(y) < 10:
        raise ValueError(f"need at least 10 rows to fit the surrogate, got {len(y)}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("features and targets must be finite")
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        if bootstrap:
            idx = np.random.default_rng(child).integers(len(y), size=len(y))
        else:
            idx = np.arange(len(y))
        trees.append(fit_tree(X[idx], y[idx], max_depth, min_leaf))
    return SurrogateForest(n_trees, seed, max_depth, min_leaf, bootstrap, tuple(trees), tuple(feature_names))


@dataclass(frozen=True)
class ShapExplanation:
    record_id: int
    baseline: float
    phi: tuple[float, ...]
    prediction: float


def _coalition_weights(p: int) -> dict[int, float]:
    return {s: math.factorial(s) * math.factorial(p - s - 1) / math.factorial(p) for s in range(p)}


def shapley_matrix(model, X, background) -> tuple[np.ndarray, float, np.ndarray]:
    """Exact interventional Shapley values for each row of ``X``.

    ``model`` is anything with ``predict(ndarray) -> ndarray``. Returns
    (phi of shape (rows, features), baseline, predictions).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    B = np.atleast_2d(np.asarray(background, dtype=float))
    p = X.shape[1]
    if p > MAX_EXACT_FEATURES:
        raise ValueError(f"exact enumeration refused for {p} features (max {MAX_EXACT_FEATURES})")
    if len(B) == 0:
        raise ValueError("background sample must not be empty")
    if B.shape[1] != p:
        raise ValueError("background and rows disagree on feature count")

    masks = list(itertools.product((False, True), repeat=p))
    m = len(B)
    # v[mask_index, row]: mean prediction with the masked-in features from x.
    v = np.empty((len(masks), len(X)))
    for mi, mask in enumerate(masks):
        sel = np.array(mask)
        hybrid = np.repeat(B[None, :, :], len(X), axis=0)
        hybrid[:, :, sel] = X[:, None, sel]
        v[mi] = model.predict(hybrid.reshape(-1, p)).reshape(len(X), m).mean(axis=1)

    index = {mask: i for i, mask in enumerate(masks)}
    weights = _coalition_weights(p)
    phi = np.zeros((len(X), p))
    for i in range(p):
        for mask in masks:
            if mask[i]:
                continue
            with_i = mask[:i] + (True,) + mask[i + 1 :]
            phi[:, i] += weights[sum(mask)] * (v[index[with_i]] - v[index[mask]])
    baseline = float(v[index[(False,) * p]][0])
    return phi, baseline, v[index[(True,) * p]]


def shapley_values(model, x, background, record_id: int = -1) -> ShapExplanation:
    phi, baseline, pred = shapley_matrix(model, [x], background)
    return ShapExplanation(record_id, baseline, tuple(float(v) for v in phi[0]), float(pred[0]))


def explain_rows(model, X, background, record_ids: Sequence[int], chunk: int = 256) -> list[ShapExplanation]:
    out = []
    X = np.asarray(X, dtype=float)
    for start in range(0, len(X), chunk):
        phi, baseline, pred = shapley_matrix(model, X[start : start + chunk], background)
        for j in range(len(phi)):
            out.append(
                ShapExplanation(
                    int(record_ids[start + j]), baseline, tuple(float(v) for v in phi[j]), float(pred[j])
                )
            )
    return out


def mean_abs_shap_report(
    explanations: Sequence[ShapExplanation], feature_names: Sequence[str] = FEATURE_NAMES
) -> list[tuple[str, float]]:
    if not explanations:
        raise ValueError("need at least one explanation")
    phi = np.array([e.phi for e in explanations])
    means = np.abs(phi).mean(axis=0)
    order = sorted(range(len(feature_names)), key=lambda i: (-means[i], i))
    return [(feature_names[i], float(means[i])) for i in order]
