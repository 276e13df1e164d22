import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import harmonic_c
from tradeforensics.ingest import Period
from tradeforensics.mega_trade import (
    MegaTradeEvent,
    c_factor,
    detect_mega_trades,
    fit_isolation_forest,
    flag_count,
    path_lengths,
    score,
    temporal_spikes,
)


def planted(seed=0):
    rng = np.random.default_rng(seed)
    inliers = rng.standard_normal((1000, 2))
    angles = rng.uniform(0, 2 * np.pi, 10)
    outliers = np.column_stack([np.cos(angles), np.sin(angles)]) * rng.uniform(8, 10, size=(10, 1))
    return np.vstack([inliers, outliers])


def test_c_values():
    assert c_factor(1) == 0.0
    assert c_factor(2) == pytest.approx(0.15443, abs=1e-5)
    assert abs(c_factor(2) - (2 * (math.log(1) + 0.5772156649) - 1)) <= 1e-6


@pytest.mark.parametrize("n", [2, 3, 5, 10, 64, 256, 1000])
def test_c_against_harmonic_sum(n):
    # ln(n-1) + gamma undershoots H(n-1) by about 1/(2(n-1)).
    gap = harmonic_c(n) - c_factor(n)
    assert 0 < gap <= 1.0 / (n - 1)


def test_c_increasing():
    vals = [c_factor(n) for n in range(2, 2000)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_identical_points():
    pts = np.ones((50, 2))
    m = fit_isolation_forest(pts, n_trees=10, seed=0)
    assert all(len(t.feature) == 1 for t in m.trees)
    s = score(m, pts)
    assert np.all(s == s[0])


def test_determinism():
    pts = planted()
    a = fit_isolation_forest(pts, n_trees=20, seed=5)
    b = fit_isolation_forest(pts, n_trees=20, seed=5)
    for ta, tb in zip(a.trees, b.trees):
        assert ta.threshold.tobytes() == tb.threshold.tobytes()
        assert ta.feature.tobytes() == tb.feature.tobytes()
    assert score(a, pts).tobytes() == score(b, pts).tobytes()


def test_planted_outliers_in_top_two_percent():
    pts = planted()
    t0 = time.perf_counter()
    m = fit_isolation_forest(pts, n_trees=100, subsample_size=256, seed=0)
    s = score(m, pts)
    elapsed = time.perf_counter() - t0
    top = set(np.argsort(-s, kind="stable")[: math.ceil(0.02 * len(pts))].tolist())
    assert set(range(1000, 1010)) <= top
    assert elapsed < 5.0
    assert s[1000:].min() > np.median(s[:1000])


def test_score_half_when_expected_path_equals_c():
    # One-leaf trees over psi points give E[h] = c(psi).
    pts = np.ones((256, 2))
    m = fit_isolation_forest(pts, n_trees=3, subsample_size=256, seed=0)
    assert score(m, np.array([1.0, 1.0])) == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 300), st.integers(2, 64), st.integers(0, 10_000))
def test_score_range_and_depth(n, psi, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 2)) * rng.uniform(0.1, 5)
    m = fit_isolation_forest(pts, n_trees=5, subsample_size=psi, seed=seed)
    s = score(m, pts)
    assert np.all((s > 0) & (s <= 1))
    limit = math.ceil(math.log2(m.subsample_size))
    assert all(int(t.depth.max()) <= limit for t in m.trees)
    assert np.all(path_lengths(m.trees[0], pts) >= 0)


def test_flag_count_exact():
    assert flag_count(1000, 0.01) == 10
    assert flag_count(100, 0.07) == 7
    assert flag_count(0, 0.01) == 0
    assert flag_count(1, 0.01) == 1
    with pytest.raises(ValueError):
        flag_count(10, 0.5)


def test_detect_matches_sort_oracle():
    pts = planted(3)
    n = len(pts)
    m = fit_isolation_forest(pts, n_trees=50, seed=3)
    ids = list(range(1, n + 1))
    values = np.exp(pts[:, 0]).tolist()
    ev = detect_mega_trades(ids, pts, [Period(2021, 1)] * n, ["A"] * n, values, m, contamination=0.01)
    assert len(ev) == math.ceil(0.01 * n) == 11
    s = score(m, pts)
    oracle = sorted(range(n), key=lambda i: (-s[i], -values[i], ids[i]))[: math.ceil(0.01 * n)]
    assert {e.record_id for e in ev} == {ids[i] for i in oracle}


def test_detect_empty():
    m = fit_isolation_forest(planted(), n_trees=2)
    assert detect_mega_trades([], np.zeros((0, 2)), [], [], [], m) == []


def month_events(counts):
    out, rid = [], 0
    for month, (n, value) in counts.items():
        for _ in range(n):
            rid += 1
            out.append(MegaTradeEvent(rid, 0.7, Period(2021, month), "R%d" % (rid % 3), value))
    return out


def test_constant_series_not_flagged():
    rep = temporal_spikes(month_events({m: (2, 100.0) for m in range(1, 13)}))
    assert rep.flagged_months == []


def test_ten_times_month_flagged():
    series = {m: (1, 100.0) for m in range(1, 13)}
    series[3] = (1, 1000.0)
    rep = temporal_spikes(month_events(series))
    # median 100, MAD 0 -> threshold 100; only March exceeds it.
    assert rep.threshold == 100.0
    assert rep.flagged_months == [(2021, 3)]


def test_spike_months_zero_filled():
    rep = temporal_spikes(month_events({1: (1, 5.0), 4: (1, 5.0)}))
    assert rep.months == [(2021, m) for m in range(1, 5)]
    assert rep.counts == [1, 0, 0, 1]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(2019, 2022), st.integers(1, 12), st.sampled_from("ABCD"),
                          st.floats(0, 1e12)), max_size=40))
def test_yearly_decomposition_exact(items):
    ev = [MegaTradeEvent(i, 0.6, Period(y, m), r, v) for i, (y, m, r, v) in enumerate(items)]
    rep = temporal_spikes(ev)
    for year, total in rep.yearly_value.items():
        parts = rep.yearly_by_reporter[year]
        assert sum(parts.values()) == total
        assert math.fsum(parts.values()) == pytest.approx(total, rel=1e-12)
