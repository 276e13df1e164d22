import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ols_normal_equations
from tradeforensics.trendline import (
    DEFAULT_HIGH_RISK_HS,
    DegenerateInputError,
    divergence_report,
    fit_ols,
    residual_orthogonality,
)


def planted_populations(seed=0, n=10_000, sigma=0.1):
    """General rows span a wide weight range; high-risk rows sit in a narrow
    band centred on it, so the pooled fit is dominated by the general slope."""
    rng = np.random.default_rng(seed)
    x_g = rng.uniform(0, 10, n)
    x_h = rng.uniform(4.5, 5.5, n)
    y_g = 1.0 + 1.0 * x_g + rng.normal(0, sigma, n)
    y_h = (1.0 + 5.0) + 1.5 * (x_h - 5.0) + rng.normal(0, sigma, n)
    hs = ["84181000"] * n + [DEFAULT_HIGH_RISK_HS[i % 4] + "10" for i in range(n)]
    return hs, np.concatenate([x_g, x_h]), np.concatenate([y_g, y_h])


def test_exact_line():
    fit = fit_ols([(x, 2 * x + 1) for x in range(5)])
    assert fit.slope == pytest.approx(2, abs=1e-9)
    assert fit.intercept == pytest.approx(1, abs=1e-9)
    assert fit.r_squared == pytest.approx(1, abs=1e-9)


def test_degenerate_x():
    with pytest.raises(DegenerateInputError):
        fit_ols([(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)])
    with pytest.raises(DegenerateInputError):
        fit_ols([(1.0, 2.0)])


def test_noisy_unit_slope():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 10, 10_000)
    y = x + rng.normal(0, 0.1, 10_000)
    fit = fit_ols(np.column_stack([x, y]))
    assert abs(fit.slope - 1.0) <= 0.01


def test_planted_divergence():
    hs, x, y = planted_populations()
    rep = divergence_report(hs, x, y)
    assert rep.status == "ok"
    general = fit_ols(np.column_stack([x[:10_000], y[:10_000]]))
    assert general.slope == pytest.approx(1.0, abs=0.05)
    assert rep.fit_all.slope == pytest.approx(1.0, abs=0.05)
    assert rep.fit_highrisk.slope == pytest.approx(1.5, abs=0.05)
    assert rep.slope_divergence == pytest.approx(0.5, abs=0.05)
    assert rep.slope_divergence == rep.fit_highrisk.slope - rep.fit_all.slope


def test_full_coverage_divergence_zero():
    hs, x, y = planted_populations(n=500)
    rep = divergence_report(hs, x, y, high_risk_hs_codes=sorted({h[:6] for h in hs}))
    assert rep.slope_divergence == 0.0


def test_small_high_risk_population_warns():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 5, 100)
    hs = ["290377"] * 5 + ["841810"] * 95
    rep = divergence_report(hs, x, 2 * x)
    assert rep.status.startswith("warning")
    assert rep.fit_highrisk is not None


def test_markers():
    hs = ["29037710", "29037720", "38247800"] + ["84181000"] * 5
    x = np.arange(8.0)
    rep = divergence_report(hs, x, x)
    assert [m["hs_code"] for m in rep.markers] == ["290377", "382478"]
    assert rep.markers[0]["mean_log_weight"] == 0.5


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=3, max_size=50))
def test_matches_normal_equations_and_orthogonality(points):
    xs = [p[0] for p in points]
    if max(xs) - min(xs) < 1e-3:
        return
    fit = fit_ols(points)
    slope, intercept = ols_normal_equations(xs, [p[1] for p in points])
    assert fit.slope == pytest.approx(slope, rel=1e-7, abs=1e-7)
    assert fit.intercept == pytest.approx(intercept, rel=1e-7, abs=1e-6)
    ys = np.array([p[1] for p in points])
    scale = np.abs(np.array(xs) - np.mean(xs)).sum() * max(1.0, np.abs(ys).max())
    assert abs(residual_orthogonality(points, fit)) <= 1e-7 * scale


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=3, max_size=30), st.integers(0, 999))
def test_order_invariance(points, seed):
    if max(p[0] for p in points) - min(p[0] for p in points) < 1e-3:
        return
    shuffled = points[:]
    random.Random(seed).shuffle(shuffled)
    a, b = fit_ols(points), fit_ols(shuffled)
    assert a.slope == pytest.approx(b.slope, rel=1e-9, abs=1e-12)
    assert a.intercept == pytest.approx(b.intercept, rel=1e-9, abs=1e-12)


def test_all_vs_all_divergence_exact_zero():
    hs, x, y = planted_populations(n=300)
    every = sorted({h[:6] for h in hs})
    assert divergence_report(hs, x, y, every).slope_divergence == 0.0
