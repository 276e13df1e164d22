"""Intelligence package: rankings, matrices, time series, plot data and memo."""
from __future__ import annotations

import csv
import json
import math
import os
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import TradeRecord
from .mega_trade import MegaTradeEvent, SpikeReport
from .price_anomaly import GroupPriceStats, boxplot_summary
from .risk import CaseFileEntry

RouteKey = tuple[str, str]

RECOMMENDATIONS = (
    "Schedule targeted audits of the importers and exporters behind the top-ranked case-file entries.",
    "Open bilateral engagement with the customs administrations of the leading exporter hotspots and destination hubs.",
    "Treat vague commodity descriptions on high-value shipments as a trigger for documentary review.",
    "Re-run this analysis on each new data release and compare hotspot rankings for emerging routes.",
)


def _rank(counter: Mapping, k: int | None) -> list[tuple]:
    items = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
    return items if k is None else items[:k]


def hotspot_routes(entries: Iterable[CaseFileEntry], k: int = 15) -> list[tuple[RouteKey, int]]:
    counts = Counter((e.reporter, e.partner) for e in entries)
    return _rank(counts, k)


@dataclass
class ReporterSummary:
    reporter: str
    n_records: int
    n_scored: int
    mean_composite: float | None
    vague_count: int
    flagged_count: int
    flagged_value: float


def aggregate_summaries(
    records: Sequence[TradeRecord],
    is_vague: Mapping[int, bool],
    composite: Mapping[int, float],
    entries: Sequence[CaseFileEntry],
    anomalous_routes: Iterable[RouteKey],
    k: int = 15,
    pseudo_partners: Sequence[str] = ("World",),
) -> dict:
    """Per-reporter, per-pair and per-HS aggregates.

    ``composite`` holds scores only for records that have one; reporters and
    codes are averaged over their scored records.
    """
    n_rec: Counter = Counter()
    scored: dict[str, list[float]] = defaultdict(list)
    vague: Counter = Counter()
    hs_scores: dict[str, list[float]] = defaultdict(list)
    for r in records:
        n_rec[r.reporter] += 1
        if is_vague.get(r.record_id):
            vague[r.reporter] += 1
        c = composite.get(r.record_id)
        if c is not None:
            scored[r.reporter].append(c)
            hs_scores[r.hs_code].append(c)

    flagged_count: Counter = Counter()
    flagged_vals: dict[str, list[float]] = defaultdict(list)
    dest_vals: dict[str, list[float]] = defaultdict(list)
    pair_vals: dict[RouteKey, list[float]] = defaultdict(list)
    for e in entries:
        flagged_count[e.reporter] += 1
        flagged_vals[e.reporter].append(e.primary_value_usd)
        pair_vals[(e.reporter, e.partner)].append(e.primary_value_usd)
        if e.partner not in pseudo_partners:
            dest_vals[e.partner].append(e.primary_value_usd)

    summary = [
        ReporterSummary(
            reporter=rep,
            n_records=n_rec[rep],
            n_scored=len(scored[rep]),
            mean_composite=math.fsum(scored[rep]) / len(scored[rep]) if scored[rep] else None,
            vague_count=vague[rep],
            flagged_count=flagged_count[rep],
            flagged_value=math.fsum(flagged_vals[rep]),
        )
        for rep in sorted(n_rec)
    ]
    pair_matrix = {key: math.fsum(v) for key, v in sorted(pair_vals.items())}
    hs_ranking = _rank({hs: math.fsum(v) / len(v) for hs, v in hs_scores.items()}, k)
    sankey = _rank(Counter(anomalous_routes), k)
    return {
        "reporter_summary": summary,
        "pair_value_matrix": pair_matrix,
        "hs_risk_ranking": [(hs, score, len(hs_scores[hs])) for hs, score in hs_ranking],
        "sankey_flows": sankey,
        "vague_ranking": _rank({s.reporter: s.vague_count for s in summary if s.vague_count}, k),
        "exporter_ranking": _rank({s.reporter: s.flagged_value for s in summary if s.flagged_count}, None),
        "destination_ranking": _rank({p: math.fsum(v) for p, v in dest_vals.items()}, None),
    }


def temporal_series(
    entries: Sequence[CaseFileEntry],
    events: Sequence[MegaTradeEvent],
    spikes: SpikeReport | None = None,
    top_reporters: int = 5,
) -> dict:
    monthly: dict[tuple[int, int], list[float]] = defaultdict(list)
    for e in entries:
        if e.period.month is not None:
            monthly[(e.period.year, e.period.month)].append(e.primary_value_usd)
    cumulative = []
    running = 0.0
    if monthly:
        (y, m), end = min(monthly), max(monthly)
        while (y, m) <= end:
            v = math.fsum(monthly.get((y, m), ()))
            running += v
            cumulative.append({"month": f"{y:04d}-{m:02d}", "value": v, "cumulative": running})
            y, m = (y + 1, 1) if m == 12 else (y, m + 1)

    per_reporter: dict[str, list[float]] = defaultdict(list)
    by_year: dict[int, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    counts: Counter = Counter()
    for ev in events:
        per_reporter[ev.reporter].append(ev.primary_value_usd)
        by_year[ev.period.year][ev.reporter].append(ev.primary_value_usd)
        counts[ev.period.year] += 1
    top = [r for r, _ in _rank({r: math.fsum(v) for r, v in per_reporter.items()}, top_reporters)]
    yearly = []
    for year in sorted(by_year):
        parts = {r: math.fsum(by_year[year].get(r, ())) for r in top}
        parts["Other"] = math.fsum(v for r, vals in by_year[year].items() if r not in top for v in vals)
        # Total is the sum of the stacked parts in fixed order.
        total = 0.0
        for r in top + ["Other"]:
            total += parts[r]
        yearly.append({"year": year, "count": counts[year], "value": total, "by_reporter": parts})

    out = {"monthly_flagged_value": cumulative, "mega_trades_yearly": yearly, "top_reporters": top}
    if spikes is not None:
        out["mega_trades_monthly"] = {
            "months": [f"{y:04d}-{m:02d}" for y, m in spikes.months],
            "counts": spikes.counts,
            "values": spikes.values,
            "threshold": spikes.threshold,
            "flagged_months": [f"{y:04d}-{m:02d}" for y, m in spikes.flagged_months],
        }
    return out


def histogram(values: Sequence[float], bins: int = 20) -> list[tuple[float, float, int]]:
    if not values:
        return []
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=bins)
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def route_slug(route: RouteKey) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", f"{route[0]}__{route[1]}").strip("_")


def parse_route(text: str) -> RouteKey:
    if "->" not in text:
        raise ValueError(f"route must look like 'Reporter->Partner', got {text!r}")
    a, b = text.split("->", 1)
    return a.strip(), b.strip()


@dataclass
class ReportBundle:
    hotspot_routes: list
    pair_value_matrix: dict
    reporter_summary: list
    hs_risk_ranking: list
    sankey_flows: list
    vague_ranking: list
    exporter_ranking: list
    destination_ranking: list
    time_series: dict
    route_price_histograms: dict
    hs_boxplot_stats: list
    scatter_rows: list
    case_summary: dict = field(default_factory=dict)
    memo_text: str = ""


def build_bundle(
    records: Sequence[TradeRecord],
    is_vague: Mapping[int, bool],
    composite: Mapping[int, float],
    entries: Sequence[CaseFileEntry],
    anomalous_routes: Iterable[RouteKey],
    events: Sequence[MegaTradeEvent],
    spikes: SpikeReport | None,
    group_stats: Mapping[str, GroupPriceStats],
    group_prices: Mapping[str, Sequence[float]],
    scatter_rows: list,
    case_summary: dict,
    histogram_routes: Sequence[RouteKey] = (),
    histogram_bins: int = 20,
    k: int = 15,
    pseudo_partners: Sequence[str] = ("World",),
) -> ReportBundle:
    agg = aggregate_summaries(records, is_vague, composite, entries, anomalous_routes, k, pseudo_partners)
    hotspots = hotspot_routes(entries, k)
    routes = list(histogram_routes)
    if not routes and hotspots:
        routes = [hotspots[0][0]]
    hists = {
        route: histogram([e.price_per_kg for e in entries if (e.reporter, e.partner) == route], histogram_bins)
        for route in routes
    }
    boxplots = [boxplot_summary(group_stats[hs], group_prices[hs]) for hs in sorted(group_stats)]
    bundle = ReportBundle(
        hotspot_routes=hotspots,
        pair_value_matrix=agg["pair_value_matrix"],
        reporter_summary=agg["reporter_summary"],
        hs_risk_ranking=agg["hs_risk_ranking"],
        sankey_flows=agg["sankey_flows"],
        vague_ranking=agg["vague_ranking"],
        exporter_ranking=agg["exporter_ranking"],
        destination_ranking=agg["destination_ranking"],
        time_series=temporal_series(entries, events, spikes),
        route_price_histograms=hists,
        hs_boxplot_stats=boxplots,
        scatter_rows=scatter_rows,
        case_summary=case_summary,
    )
    bundle.memo_text = policy_memo(bundle, case_summary)
    return bundle


def fmt_usd(x: float) -> str:
    return f"${x:,.2f}"


def policy_memo(bundle: ReportBundle, case_summary: Mapping) -> str:
    exporters = bundle.exporter_ranking[:3]
    hubs = bundle.destination_ranking[:3]
    lines = [
        "# Policy Memo: Priority Trade Anomalies",
        "",
        "## Summary",
        "",
        f"- Flagged entries for customs review: {case_summary['count']}",
        f"- Total value of flagged trade: {fmt_usd(case_summary['total_value_usd'])}",
        f"- Entries that also carry a vague commodity description: {case_summary.get('highest_priority_count', 0)}",
    ]
    if bundle.hotspot_routes:
        (rep, par), n = bundle.hotspot_routes[0]
        lines.append(f"- Most frequent high-risk route: {rep} -> {par} ({n} entries)")
    lines += ["", "## Key exporter hotspots", ""]
    lines += [f"{i}. {name}: {fmt_usd(v)}" for i, (name, v) in enumerate(exporters, 1)] or ["None identified."]
    lines += ["", "## Key destination hubs", ""]
    lines += [f"{i}. {name}: {fmt_usd(v)}" for i, (name, v) in enumerate(hubs, 1)] or ["None identified."]
    lines += ["", "## Recommendations", ""]
    lines += [f"- {r}" for r in RECOMMENDATIONS]
    lines += [
        "",
        "Scores are statistical and heuristic screening signals for expert review,",
        "not findings of illicit activity.",
        "",
    ]
    return "\n".join(lines)


def _f(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_f(x) for x in row])


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_reports(bundle: ReportBundle, out_dir: str | os.PathLike) -> list[str]:
    """Write every report and plot-data file; returns the file names."""
    out = os.fspath(out_dir)
    written = []

    def path(name: str) -> str:
        written.append(name)
        return os.path.join(out, name)

    _write_csv(path("hotspots.csv"), ["reporter", "partner", "count"],
               ((r, p, n) for (r, p), n in bundle.hotspot_routes))

    partners = sorted({p for _, p in bundle.pair_value_matrix})
    reporters = sorted({r for r, _ in bundle.pair_value_matrix})
    _write_csv(path("pair_value_matrix.csv"), ["reporter", *partners],
               ([r, *(bundle.pair_value_matrix.get((r, p), 0.0) for p in partners)] for r in reporters))

    _write_csv(path("reporter_summary.csv"),
               ["reporter", "n_records", "n_scored", "mean_composite", "vague_count", "flagged_count", "flagged_value"],
               ((s.reporter, s.n_records, s.n_scored, s.mean_composite, s.vague_count, s.flagged_count,
                 s.flagged_value) for s in bundle.reporter_summary))
    _write_csv(path("vague_ranking.csv"), ["reporter", "vague_count"], bundle.vague_ranking)
    _write_csv(path("hs_risk_ranking.csv"), ["hs_code", "mean_composite", "n_scored"], bundle.hs_risk_ranking)
    _write_csv(path("sankey_flows.csv"), ["source", "target", "anomalous_shipments"],
               ((r, p, n) for (r, p), n in bundle.sankey_flows))
    _write_json(path("time_series.json"), bundle.time_series)
    _write_csv(path("plot_scatter.csv"),
               ["record_id", "log_weight", "log_value", "cluster_id", "is_high_risk_hs"], bundle.scatter_rows)
    _write_csv(path("plot_boxplots.csv"),
               ["hs_code", "n", "q1", "median", "q3", "whisker_low", "whisker_high", "lower_fence",
                "upper_fence", "outliers"],
               ((b["hs_code"], b["n"], b["q1"], b["median"], b["q3"], b["whisker_low"], b["whisker_high"],
                 b["lower_fence"], b["upper_fence"], ";".join(repr(o) for o in b["outliers"]))
                for b in bundle.hs_boxplot_stats))
    for route, bins in bundle.route_price_histograms.items():
        _write_csv(path(f"plot_histogram_{route_slug(route)}.csv"), ["bin_low", "bin_high", "count"], bins)
    with open(path("memo.md"), "w", encoding="utf-8") as fh:
        fh.write(bundle.memo_text)
    return written
