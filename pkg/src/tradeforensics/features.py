"""Per-record feature engineering: log scales, price per kg, vague flag."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .ingest import TradeRecord

DEFAULT_VAGUE_KEYWORDS: tuple[str, ...] = (
    "mixtures",
    "halogenated",
    "n.e.c.",
    "not elsewhere specified",
)


@dataclass(frozen=True)
class FeatureRow:
    record_id: int
    log_value: float | None
    log_weight: float | None
    price_per_kg: float | None
    is_vague: bool

    @property
    def cluster_eligible(self) -> bool:
        return self.log_value is not None and self.log_weight is not None


def normalize_keywords(keywords: Iterable[str]) -> tuple[str, ...]:
    """Lower-case, de-duplicate (first occurrence wins) and reject an empty list."""
    out: list[str] = []
    for kw in keywords:
        k = str(kw).strip().lower()
        if k and k not in out:
            out.append(k)
    if not out:
        raise ValueError("vague keyword list must not be empty")
    return tuple(out)


def flag_vague(description: str, keywords: Sequence[str] = DEFAULT_VAGUE_KEYWORDS) -> bool:
    text = description.lower()
    return any(kw.lower() in text for kw in keywords)


def build_feature_row(
    record: TradeRecord, keywords: Sequence[str] = DEFAULT_VAGUE_KEYWORDS
) -> FeatureRow:
    value = record.primary_value_usd
    weight = record.net_wgt_kg
    return FeatureRow(
        record_id=record.record_id,
        log_value=math.log10(value) if value > 0 else None,
        log_weight=math.log10(weight) if weight > 0 else None,
        price_per_kg=value / weight if weight > 0 else None,
        is_vague=flag_vague(record.description, keywords),
    )


def build_features(
    records: Iterable[TradeRecord], keywords: Sequence[str] = DEFAULT_VAGUE_KEYWORDS
) -> list[FeatureRow]:
    kws = normalize_keywords(keywords)
    return [build_feature_row(r, kws) for r in records]


def feature_arrays(rows: Sequence[FeatureRow]) -> dict[str, np.ndarray]:
    """Columnar view with NaN standing in for absent values.

    NaN never leaves this helper as data: callers select on the validity masks.
    """
    nan = float("nan")
    log_value = np.array([nan if r.log_value is None else r.log_value for r in rows], dtype=float)
    log_weight = np.array([nan if r.log_weight is None else r.log_weight for r in rows], dtype=float)
    price = np.array([nan if r.price_per_kg is None else r.price_per_kg for r in rows], dtype=float)
    return {
        "record_id": np.array([r.record_id for r in rows], dtype=np.int64),
        "log_value": log_value,
        "log_weight": log_weight,
        "price_per_kg": price,
        "is_vague": np.array([r.is_vague for r in rows], dtype=bool),
        "eligible": ~(np.isnan(log_value) | np.isnan(log_weight)),
        "has_price": ~np.isnan(price),
    }
