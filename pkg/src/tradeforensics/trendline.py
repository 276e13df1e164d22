"""Value-to-weight trendlines for the full population versus high-risk codes."""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

LOG = logging.getLogger(__name__)

DEFAULT_HIGH_RISK_HS = ("290377", "290379", "382478", "382499")
MIN_HIGH_RISK_ROWS = 10


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class TrendlineFit:
    population: str
    slope: float
    intercept: float
    r_squared: float
    n: int


@dataclass
class DivergenceReport:
    fit_all: TrendlineFit | None
    fit_highrisk: TrendlineFit | None
    slope_divergence: float | None
    high_risk_hs_codes: list[str]
    markers: list[dict] = field(default_factory=list)
    status: str = "ok"


def fit_ols(points, population: str = "All") -> TrendlineFit:
    """Least-squares line of log_value on log_weight from (x, y) pairs."""
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(P)
    if n < 2:
        raise DegenerateInputError("need at least 2 points")
    x, y = P[:, 0], P[:, 1]
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    if sxx == 0 or np.ptp(x) == 0:
        raise DegenerateInputError("log_weight has zero variance")
    dy = y - ym
    slope = float(dx @ dy) / sxx
    intercept = float(ym - slope * xm)
    resid = dy - slope * dx
    sse = float(resid @ resid)
    sst = float(dy @ dy)
    r2 = 1.0 if sst == 0 else 1.0 - sse / sst
    return TrendlineFit(population, slope, intercept, r2, n)


def is_high_risk(hs_code: str, codes: Iterable[str]) -> bool:
    return hs_code[:6] in set(codes)


def divergence_report(
    hs_codes: Sequence[str],
    log_weight: Sequence[float],
    log_value: Sequence[float],
    high_risk_hs_codes: Sequence[str] = DEFAULT_HIGH_RISK_HS,
) -> DivergenceReport:
    """Fit both populations and report slope_highrisk - slope_all.

    Rows are high-risk when the first six digits of their HS code are listed.
    A population that cannot be fitted yields ``None`` and a non-ok status.
    """
    codes = [str(c) for c in high_risk_hs_codes]
    code_set = set(codes)
    x = np.asarray(log_weight, dtype=float)
    y = np.asarray(log_value, dtype=float)
    mask = np.array([h[:6] in code_set for h in hs_codes], dtype=bool)

    status = "ok"
    if mask.sum() < MIN_HIGH_RISK_ROWS:
        status = "warning: high-risk population below %d rows" % MIN_HIGH_RISK_ROWS
        LOG.warning("high-risk population has only %d rows", int(mask.sum()))

    def attempt(sel: np.ndarray, name: str) -> TrendlineFit | None:
        nonlocal status
        try:
            return fit_ols(np.column_stack([x[sel], y[sel]]), name)
        except DegenerateInputError as exc:
            status = f"degenerate {name}: {exc}"
            return None

    fit_all = attempt(np.ones(len(x), dtype=bool), "All")
    fit_hr = attempt(mask, "HighRisk")
    divergence = fit_hr.slope - fit_all.slope if fit_all and fit_hr else None

    sums: dict[str, list[int]] = defaultdict(list)
    for i in np.flatnonzero(mask):
        sums[hs_codes[i][:6]].append(int(i))
    markers = [
        {
            "hs_code": code,
            "n": len(idx),
            "mean_log_weight": float(x[idx].mean()),
            "mean_log_value": float(y[idx].mean()),
        }
        for code, idx in sorted(sums.items())
    ]
    return DivergenceReport(fit_all, fit_hr, divergence, codes, markers, status)


def residual_orthogonality(points, fit: TrendlineFit) -> float:
    P = np.asarray(points, dtype=float)
    x, y = P[:, 0], P[:, 1]
    resid = y - (fit.slope * x + fit.intercept)
    return float(resid @ (x - x.mean()))


def report_dict(report: DivergenceReport) -> dict:
    def fit_dict(f: TrendlineFit | None):
        if f is None:
            return None
        return {"population": f.population, "slope": f.slope, "intercept": f.intercept,
                "r_squared": f.r_squared, "n": f.n}

    return {
        "fit_all": fit_dict(report.fit_all),
        "fit_highrisk": fit_dict(report.fit_highrisk),
        "slope_divergence": report.slope_divergence,
        "high_risk_hs_codes": report.high_risk_hs_codes,
        "markers": report.markers,
        "status": report.status,
    }

