"""Per-HS-code Tukey fences on price per kg, and the two review queues."""
from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

QUEUE_WEIGHT_THRESHOLD_KG = 1.0


class Side(str, enum.Enum):
    LOW = "Low"
    HIGH = "High"


class Queue(str, enum.Enum):
    DATA_QUALITY = "DataQualityReview"
    CUSTOMS = "CustomsReview"


@dataclass(frozen=True)
class GroupPriceStats:
    hs_code: str
    n: int
    q1: float
    median: float
    q3: float
    iqr: float
    lower_fence: float
    upper_fence: float


@dataclass(frozen=True)
class PriceAnomaly:
    record_id: int
    hs_code: str
    price_per_kg: float
    side: Side
    queue: Queue | None = None


@dataclass(frozen=True)
class PricedRow:
    """Minimal input for the detector: one record with a defined price."""

    record_id: int
    hs_code: str
    price_per_kg: float


def quantile_sorted(values: Sequence[float], q: float) -> float:
    """Linear interpolation at position (n-1)*q of an ascending sequence."""
    n = len(values)
    if n == 0:
        raise ValueError("quantile of empty sequence")
    pos = (n - 1) * q
    lo = math.floor(pos)
    hi = math.ceil(pos)
    if lo == hi:
        return float(values[lo])
    frac = pos - lo
    return float(values[lo]) + (float(values[hi]) - float(values[lo])) * frac


def stats_for(hs_code: str, prices: Iterable[float], multiplier: float = 1.5) -> GroupPriceStats:
    ordered = sorted(prices)
    q1 = quantile_sorted(ordered, 0.25)
    med = quantile_sorted(ordered, 0.5)
    q3 = quantile_sorted(ordered, 0.75)
    iqr = q3 - q1
    return GroupPriceStats(
        hs_code=hs_code,
        n=len(ordered),
        q1=q1,
        median=med,
        q3=q3,
        iqr=iqr,
        lower_fence=q1 - multiplier * iqr,
        upper_fence=q3 + multiplier * iqr,
    )


def _grouped(rows: Iterable[PricedRow]) -> dict[str, list[PricedRow]]:
    groups: dict[str, list[PricedRow]] = defaultdict(list)
    for r in rows:
        groups[r.hs_code].append(r)
    return groups


def group_stats(rows: Iterable[PricedRow], multiplier: float = 1.5) -> dict[str, GroupPriceStats]:
    groups = _grouped(rows)
    return {
        hs: stats_for(hs, (r.price_per_kg for r in members), multiplier)
        for hs, members in sorted(groups.items())
    }


def detect_price_outliers(
    rows: Iterable[PricedRow],
    stats: Mapping[str, GroupPriceStats],
    min_group_size: int = 4,
) -> list[PriceAnomaly]:
    """Rows strictly outside their group's fences, ordered by record_id."""
    out = []
    for r in rows:
        s = stats[r.hs_code]
        if s.n < min_group_size:
            continue
        if r.price_per_kg > s.upper_fence:
            out.append(PriceAnomaly(r.record_id, r.hs_code, r.price_per_kg, Side.HIGH))
        elif r.price_per_kg < s.lower_fence:
            out.append(PriceAnomaly(r.record_id, r.hs_code, r.price_per_kg, Side.LOW))
    out.sort(key=lambda a: a.record_id)
    return out


def triage(anomaly: PriceAnomaly, net_wgt_kg: float) -> PriceAnomaly:
    queue = Queue.DATA_QUALITY if net_wgt_kg < QUEUE_WEIGHT_THRESHOLD_KG else Queue.CUSTOMS
    return replace(anomaly, queue=queue)


def boxplot_summary(stats: GroupPriceStats, prices: Iterable[float]) -> dict:
    """Box-and-whisker numbers for one group: whiskers reach the most extreme
    values still inside the fences."""
    prices = list(prices)
    inside = [p for p in prices if stats.lower_fence <= p <= stats.upper_fence]
    outliers = sorted(p for p in prices if p < stats.lower_fence or p > stats.upper_fence)
    return {
        "hs_code": stats.hs_code,
        "n": stats.n,
        "q1": stats.q1,
        "median": stats.median,
        "q3": stats.q3,
        "whisker_low": min(inside) if inside else stats.q1,
        "whisker_high": max(inside) if inside else stats.q3,
        "lower_fence": stats.lower_fence,
        "upper_fence": stats.upper_fence,
        "outliers": outliers,
    }
