"""Isolation Forest mega-trade detection and monthly spike analysis."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ingest import Period

EULER_GAMMA = 0.5772156649
MAD_SCALE = 1.4826


def harmonic(i: float) -> float:
    return math.log(i) + EULER_GAMMA


def c_factor(n: int) -> float:
    """Average unsuccessful-search path length in a BST of n nodes."""
    if n <= 1:
        return 0.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


@dataclass(frozen=True)
class IsolationTree:
    # Flat node arrays; feature == -1 marks an external node.
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())


@dataclass(frozen=True)
class IsolationForestModel:
    n_trees: int
    subsample_size: int
    height_limit: int
    seed: int
    trees: tuple[IsolationTree, ...] = field(repr=False)

    def score(self, points) -> np.ndarray:
        return score(self, points)


def _build_tree(X: np.ndarray, height_limit: int, rng: np.random.Generator) -> IsolationTree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    size: list[int] = []
    depth: list[int] = []

    def new_node(n: int, d: int) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(n)
        depth.append(d)
        return len(size) - 1

    stack = [(new_node(len(X), 0), X)]
    while stack:
        node, data = stack.pop()
        d = depth[node]
        if d >= height_limit or len(data) <= 1:
            continue
        lo = data.min(axis=0)
        hi = data.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if splittable.size == 0:
            continue
        f = int(splittable[rng.integers(splittable.size)])
        t = float(rng.uniform(lo[f], hi[f]))
        mask = data[:, f] < t
        feature[node] = f
        threshold[node] = t
        l_node = new_node(int(mask.sum()), d + 1)
        r_node = new_node(int((~mask).sum()), d + 1)
        left[node] = l_node
        right[node] = r_node
        stack.append((r_node, data[~mask]))
        stack.append((l_node, data[mask]))

    return IsolationTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        size=np.array(size, dtype=np.int64),
        depth=np.array(depth, dtype=np.int64),
    )


def fit_isolation_forest(
    points, n_trees: int = 100, subsample_size: int = 256, seed: int = 0
) -> IsolationForestModel:
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("isolation forest needs at least 2 points")
    if not np.isfinite(X).all():
        raise ValueError("points must be finite")
    if n_trees < 1 or subsample_size < 2:
        raise ValueError("n_trees >= 1 and subsample_size >= 2 required")
    psi = min(subsample_size, len(X))
    height_limit = math.ceil(math.log2(psi))
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        idx = rng.choice(len(X), size=psi, replace=False)
        trees.append(_build_tree(X[np.sort(idx)], height_limit, rng))
    return IsolationForestModel(n_trees, psi, height_limit, seed, tuple(trees))


def path_lengths(tree: IsolationTree, X: np.ndarray) -> np.ndarray:
    node = np.zeros(len(X), dtype=np.int64)
    rows = np.arange(len(X))
    for _ in range(tree.max_depth):
        f = tree.feature[node]
        active = f >= 0
        if not active.any():
            break
        go_left = X[rows[active], f[active]] < tree.threshold[node[active]]
        node[active] = np.where(go_left, tree.left[node[active]], tree.right[node[active]])
    c_leaf = np.array([c_factor(int(s)) for s in tree.size])
    return tree.depth[node] + c_leaf[node]


def score(model: IsolationForestModel, points):
    """Anomaly score 2^(-E[h]/c(psi)).

    A single point gives a float, a 2-D array gives one score per row.
    """
    single = np.ndim(points) == 1
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if not np.isfinite(X).all():
        raise ValueError("points must be finite")
    total = np.zeros(len(X))
    for tree in model.trees:
        total += path_lengths(tree, X)
    mean_h = total / model.n_trees
    s = np.power(2.0, -mean_h / c_factor(model.subsample_size))
    return float(s[0]) if single else s


@dataclass(frozen=True)
class MegaTradeEvent:
    record_id: int
    score: float
    period: Period
    reporter: str
    primary_value_usd: float


def flag_count(n: int, contamination: float) -> int:
    if not 0 < contamination < 0.5:
        raise ValueError("contamination must lie in (0, 0.5)")
    if n == 0:
        return 0
    # Guard against products such as 0.07 * 100 = 7.000000000000001.
    return min(n, math.ceil(round(contamination * n, 9)))


def top_k_order(scores: np.ndarray, values: np.ndarray, record_ids: np.ndarray) -> np.ndarray:
    """Indices sorted by score desc, value desc, record_id asc."""
    return np.lexsort((record_ids, -values, -scores))


def detect_mega_trades(
    record_ids: Sequence[int],
    points,
    periods: Sequence[Period],
    reporters: Sequence[str],
    values: Sequence[float],
    model: IsolationForestModel,
    contamination: float = 0.01,
) -> list[MegaTradeEvent]:
    """Flag exactly ceil(contamination * n) highest-scoring rows.

    Returned events are ordered by record_id.
    """
    n = len(record_ids)
    k = flag_count(n, contamination)
    if k == 0:
        return []
    s = score(model, points)
    ids = np.asarray(record_ids, dtype=np.int64)
    vals = np.asarray(values, dtype=float)
    chosen = top_k_order(s, vals, ids)[:k]
    events = [
        MegaTradeEvent(int(ids[i]), float(s[i]), periods[i], reporters[i], float(vals[i]))
        for i in chosen
    ]
    events.sort(key=lambda e: e.record_id)
    return events


@dataclass
class SpikeReport:
    months: list[tuple[int, int]]
    counts: list[int]
    values: list[float]
    threshold: float
    flagged_months: list[tuple[int, int]]
    yearly_count: dict[int, int]
    yearly_value: dict[int, float]
    yearly_by_reporter: dict[int, dict[str, float]]


def _month_range(start: tuple[int, int], end: tuple[int, int]) -> list[tuple[int, int]]:
    out = []
    y, m = start
    while (y, m) <= end:
        out.append((y, m))
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)
    return out


def robust_threshold(values: Sequence[float], k: float = 3.0) -> float:
    arr = np.asarray(values, dtype=float)
    med = float(np.median(arr))
    mad = float(np.median(np.abs(arr - med))) * MAD_SCALE
    return med + k * mad


def temporal_spikes(events: Sequence[MegaTradeEvent]) -> SpikeReport:
    """Monthly mega-trade series over the observed month range.

    Months with no events inside the range count as zero. Annual-only
    periods contribute to the yearly figures but not the monthly series.
    """
    monthly_count: dict[tuple[int, int], int] = defaultdict(int)
    monthly_value: dict[tuple[int, int], list[float]] = defaultdict(list)
    by_reporter: dict[int, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    yearly_count: dict[int, int] = defaultdict(int)
    for e in events:
        if e.period.month is not None:
            key = (e.period.year, e.period.month)
            monthly_count[key] += 1
            monthly_value[key].append(e.primary_value_usd)
        yearly_count[e.period.year] += 1
        by_reporter[e.period.year][e.reporter].append(e.primary_value_usd)

    months = _month_range(min(monthly_count), max(monthly_count)) if monthly_count else []
    counts = [monthly_count.get(m, 0) for m in months]
    values = [math.fsum(monthly_value.get(m, ())) for m in months]
    threshold = robust_threshold(values) if values else 0.0
    flagged = [m for m, v in zip(months, values) if v > threshold]

    yearly_by_reporter = {
        y: {r: math.fsum(v) for r, v in sorted(reps.items())} for y, reps in sorted(by_reporter.items())
    }
    # Totals are defined as the sum of the per-reporter parts, so the
    # decomposition adds up exactly.
    yearly_value = {y: sum(parts.values()) for y, parts in yearly_by_reporter.items()}
    return SpikeReport(
        months=months,
        counts=counts,
        values=values,
        threshold=threshold,
        flagged_months=flagged,
        yearly_count=dict(sorted(yearly_count.items())),
        yearly_value=yearly_value,
        yearly_by_reporter=yearly_by_reporter,
    )
