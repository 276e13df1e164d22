"""Risk scoring and the prioritized case file."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import Period, TradeRecord
from .price_anomaly import GroupPriceStats, PriceAnomaly, Queue

PRICE_WEIGHT = 0.7
VALUE_WEIGHT = 0.3
PRICE_SATURATION_IQRS = 3.0


@dataclass(frozen=True)
class RiskScore:
    record_id: int
    price_score: float
    value_score: float
    composite: float


@dataclass(frozen=True)
class CaseFileEntry:
    record_id: int
    period: Period
    reporter: str
    partner: str
    hs_code: str
    description: str
    primary_value_usd: float
    net_wgt_kg: float
    price_per_kg: float
    cluster_id: int | None
    is_vague: bool
    price_outlier_side: str
    mega_trade: bool
    price_score: float
    value_score: float
    composite: float
    queue: str

    @property
    def highest_priority(self) -> bool:
        """Price anomaly that also carries a vague description."""
        return self.is_vague


CASE_FILE_COLUMNS = [
    "record_id",
    "period",
    "reporter",
    "partner",
    "hs_code",
    "description",
    "primary_value_usd",
    "net_wgt_kg",
    "price_per_kg",
    "cluster_id",
    "is_vague",
    "price_outlier_side",
    "mega_trade",
    "price_score",
    "value_score",
    "composite",
    "queue",
    "highest_priority",
]


def price_score(price: float, stats: GroupPriceStats) -> float:
    deviation = abs(price - stats.median)
    if deviation == 0:
        return 0.0
    if stats.iqr == 0:
        return 1.0
    return min(1.0, deviation / (PRICE_SATURATION_IQRS * stats.iqr))


def value_scores(values: Sequence[float], reference: Sequence[float] | None = None) -> np.ndarray:
    """Mid-rank percentile of each value within ``reference`` (default: itself)."""
    x = np.asarray(values, dtype=float)
    ref = np.sort(np.asarray(values if reference is None else reference, dtype=float))
    n = len(ref)
    if n < 2:
        return np.full(len(x), 0.5)
    below = np.searchsorted(ref, x, side="left")
    equal = np.searchsorted(ref, x, side="right") - below
    ranks = (below + 0.5 * equal - 0.5) / (n - 1)
    return np.clip(ranks, 0.0, 1.0)


def value_score(x: float, all_values: Sequence[float]) -> float:
    return float(value_scores([x], all_values)[0])


def composite_score(price: float, value: float) -> float:
    if not (0.0 <= price <= 1.0 and 0.0 <= value <= 1.0):
        raise ValueError(f"scores must lie in [0, 1], got ({price}, {value})")
    return PRICE_WEIGHT * price + VALUE_WEIGHT * value


def sort_key(entry: CaseFileEntry):
    return (-entry.composite, -entry.primary_value_usd, entry.record_id)


def build_case_file(
    anomalies: Iterable[PriceAnomaly],
    records: Mapping[int, TradeRecord],
    scores: Mapping[int, RiskScore],
    is_vague: Mapping[int, bool],
    cluster_ids: Mapping[int, int],
    mega_ids: set[int],
) -> list[CaseFileEntry]:
    """Customs-review anomalies, enriched and ranked by composite risk."""
    entries = []
    for a in anomalies:
        if a.queue is not Queue.CUSTOMS:
            continue
        r = records[a.record_id]
        s = scores[a.record_id]
        entries.append(
            CaseFileEntry(
                record_id=r.record_id,
                period=r.period,
                reporter=r.reporter,
                partner=r.partner,
                hs_code=r.hs_code,
                description=r.description,
                primary_value_usd=r.primary_value_usd,
                net_wgt_kg=r.net_wgt_kg,
                price_per_kg=a.price_per_kg,
                cluster_id=cluster_ids.get(r.record_id),
                is_vague=bool(is_vague[r.record_id]),
                price_outlier_side=a.side.value,
                mega_trade=r.record_id in mega_ids,
                price_score=s.price_score,
                value_score=s.value_score,
                composite=s.composite,
                queue=a.queue.value,
            )
        )
    entries.sort(key=sort_key)
    return entries


def case_file_summary(entries: Sequence[CaseFileEntry], anomalies: Sequence[PriceAnomaly]) -> dict:
    by_queue = {q.value: 0 for q in Queue}
    for a in anomalies:
        if a.queue is not None:
            by_queue[a.queue.value] += 1
    return {
        "count": len(entries),
        "total_value_usd": math.fsum(e.primary_value_usd for e in entries),
        "highest_priority_count": sum(e.highest_priority for e in entries),
        "by_queue": by_queue,
    }


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def case_file_rows(entries: Iterable[CaseFileEntry]):
    for e in entries:
        yield [_fmt(getattr(e, col)) for col in CASE_FILE_COLUMNS]


def write_case_file(entries: Sequence[CaseFileEntry], summary: dict, out_dir: str | os.PathLike) -> None:
    with open(os.path.join(out_dir, "case_file.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CASE_FILE_COLUMNS)
        writer.writerows(case_file_rows(entries))
    with open(os.path.join(out_dir, "case_file_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
