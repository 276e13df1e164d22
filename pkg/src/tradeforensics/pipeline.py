"""Stage orchestration and the run manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import archetypes, explain, features, ingest, mega_trade, network, price_anomaly, reporting, risk, trendline
from .config import PipelineConfig, stage_seeds

LOG = logging.getLogger(__name__)

STAGES = (
    "ingest",
    "features",
    "archetypes",
    "price_anomaly",
    "mega_trade",
    "risk_engine",
    "trade_network",
    "explain",
    "trendline",
    "reporting",
)
MANIFEST_NAME = "manifest.json"


class InputError(OSError):
    """Input unreadable or output directory not creatable."""


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunManifest:
    config: dict[str, Any]
    input_sha256: str
    seeds: dict[str, int | None]
    counts: dict[str, Any] = field(default_factory=dict)
    stages_completed: list[str] = field(default_factory=list)
    status: str = "running"
    failed_stage: str | None = None
    error: str | None = None
    outputs: list[str] = field(default_factory=list)
    # Wall-clock seconds per stage; kept out of the on-disk manifest so that
    # repeated runs stay byte-identical.
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "input_sha256": self.input_sha256,
            "seeds": self.seeds,
            "counts": self.counts,
            "stages_completed": self.stages_completed,
            "status": self.status,
            "failed_stage": self.failed_stage,
            "error": self.error,
            "outputs": sorted(self.outputs),
        }

    def write(self, out_dir: str) -> None:
        with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def prepare(cfg: PipelineConfig) -> str:
    """Check the input and create the output directory; returns the checksum."""
    if not cfg.input:
        raise InputError("no input file given")
    if not os.path.isfile(cfg.input):
        raise InputError(f"input file not found: {cfg.input}")
    try:
        digest = sha256_file(cfg.input)
    except OSError as exc:
        raise InputError(f"cannot read input {cfg.input}: {exc}") from exc
    try:
        os.makedirs(cfg.out_dir, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {cfg.out_dir}: {exc}") from exc
    if not os.access(cfg.out_dir, os.W_OK):
        raise InputError(f"output directory not writable: {cfg.out_dir}")
    return digest


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


class _Run:
    """Mutable state threaded through the stages."""

    def __init__(self, cfg: PipelineConfig, manifest: RunManifest):
        self.cfg = cfg
        self.m = manifest
        self.out = cfg.out_dir
        self.seeds = manifest.seeds

    def path(self, name: str) -> str:
        self.m.outputs.append(name)
        return os.path.join(self.out, name)

    # -- stages ---------------------------------------------------------

    def ingest(self) -> None:
        try:
            self.records, self.rejects = ingest.parse_file(self.cfg.input, self.cfg.column_mapping)
            data_lines = ingest.data_line_count(self.cfg.input)
        except OSError as exc:
            raise InputError(f"cannot read input {self.cfg.input}: {exc}") from exc
        ingest.write_rejects(self.rejects, self.path("rejects.csv"))
        by_reason = Counter(r.reason.value for r in self.rejects)
        self.m.counts.update(
            data_lines=data_lines,
            parsed=len(self.records),
            rejected=len(self.rejects),
            rejects_by_reason={r.value: by_reason.get(r.value, 0) for r in ingest.RejectReason},
        )
        self.by_id = {r.record_id: r for r in self.records}

    def features(self) -> None:
        self.rows = features.build_features(self.records, self.cfg.vague_keywords)
        self.arr = features.feature_arrays(self.rows)
        self.is_vague = {r.record_id: r.is_vague for r in self.rows}
        self.m.counts.update(
            cluster_eligible=int(self.arr["eligible"].sum()),
            priced=int(self.arr["has_price"].sum()),
            vague=int(self.arr["is_vague"].sum()),
        )

    def archetypes(self) -> None:
        a = self.arr
        elig = a["eligible"]
        pts = np.column_stack([a["log_weight"][elig], a["log_value"][elig]])
        ids = a["record_id"][elig]
        self.cluster_ids: dict[int, int] = {}
        rows = []
        if len(pts) >= self.cfg.clusters:
            model = archetypes.fit_kmeans(
                pts, self.cfg.clusters, self.seeds["archetypes"], self.cfg.kmeans_max_iter, self.cfg.kmeans_tol
            )
            self.cluster_ids = dict(zip(ids.tolist(), model.labels.tolist()))
            labels = archetypes.label_archetypes(model, float(np.median(pts[:, 0])), float(np.median(pts[:, 1])))
            sizes = np.bincount(model.labels, minlength=model.k)
            rows = [
                [lab.cluster_id, lab.label, repr(float(c[0])), repr(float(c[1])), int(sizes[lab.cluster_id])]
                for lab, c in zip(labels, model.centroids)
            ]
            self.m.counts["kmeans_iterations"] = model.iterations_run
        else:
            LOG.warning("only %d cluster-eligible rows; archetypes skipped", len(pts))
        _write_csv(self.path("archetypes.csv"),
                   ["cluster_id", "label", "centroid_log_weight", "centroid_log_value", "size"], rows)

    def price_anomaly(self) -> None:
        a = self.arr
        self.priced = [
            price_anomaly.PricedRow(int(rid), self.by_id[int(rid)].hs_code, float(p))
            for rid, p in zip(a["record_id"][a["has_price"]], a["price_per_kg"][a["has_price"]])
        ]
        self.stats = price_anomaly.group_stats(self.priced, self.cfg.iqr_multiplier)
        flagged = price_anomaly.detect_price_outliers(self.priced, self.stats, self.cfg.min_group_size)
        self.anomalies = [price_anomaly.triage(x, self.by_id[x.record_id].net_wgt_kg) for x in flagged]
        q = Counter(x.queue.value for x in self.anomalies)
        self.m.counts["price_flags"] = {
            "total": len(self.anomalies),
            **{queue.value: q.get(queue.value, 0) for queue in price_anomaly.Queue},
        }
        _write_csv(
            self.path("price_anomalies.csv"),
            ["record_id", "hs_code", "price_per_kg", "side", "queue"],
            ([x.record_id, x.hs_code, repr(x.price_per_kg), x.side.value, x.queue.value] for x in self.anomalies),
        )

    def mega_trade(self) -> None:
        a = self.arr
        elig = a["eligible"]
        ids = a["record_id"][elig]
        pts = np.column_stack([a["log_value"][elig], a["log_weight"][elig]])
        self.events: list[mega_trade.MegaTradeEvent] = []
        if len(pts) >= 2:
            model = mega_trade.fit_isolation_forest(
                pts, self.cfg.iforest_trees, self.cfg.iforest_subsample, self.seeds["mega_trade"]
            )
            recs = [self.by_id[int(i)] for i in ids]
            self.events = mega_trade.detect_mega_trades(
                ids, pts, [r.period for r in recs], [r.reporter for r in recs],
                [r.primary_value_usd for r in recs], model, self.cfg.contamination,
            )
        else:
            LOG.warning("fewer than 2 eligible rows; mega-trade detection skipped")
        self.mega_ids = {e.record_id for e in self.events}
        self.spikes = mega_trade.temporal_spikes(self.events)
        self.m.counts["mega_trades"] = len(self.events)
        self.m.counts["spike_months"] = [f"{y:04d}-{m:02d}" for y, m in self.spikes.flagged_months]
        _write_csv(
            self.path("mega_trades.csv"),
            ["record_id", "score", "period", "reporter", "primary_value_usd"],
            ([e.record_id, repr(e.score), str(e.period), e.reporter, repr(e.primary_value_usd)] for e in self.events),
        )

    def risk_engine(self) -> None:
        all_values = [r.primary_value_usd for r in self.records]
        priced_values = [self.by_id[p.record_id].primary_value_usd for p in self.priced]
        vs = risk.value_scores(priced_values, all_values) if self.priced else []
        self.scores: dict[int, risk.RiskScore] = {}
        for p, v in zip(self.priced, vs):
            ps = risk.price_score(p.price_per_kg, self.stats[p.hs_code])
            v = float(v)
            self.scores[p.record_id] = risk.RiskScore(p.record_id, ps, v, risk.composite_score(ps, v))
        self.composite = {rid: s.composite for rid, s in self.scores.items()}
        self.entries = risk.build_case_file(
            self.anomalies, self.by_id, self.scores, self.is_vague, self.cluster_ids, self.mega_ids
        )
        self.case_summary = risk.case_file_summary(self.entries, self.anomalies)
        risk.write_case_file(self.entries, self.case_summary, self.out)
        self.m.outputs += ["case_file.csv", "case_file_summary.json"]
        self.m.counts["case_file_entries"] = len(self.entries)

    def trade_network(self) -> None:
        flagged_ids = sorted({e.record_id for e in self.entries} | self.mega_ids)
        self.flagged_records = [self.by_id[i] for i in flagged_ids]
        trades = [
            network.FlaggedTrade(r.reporter, r.partner, r.flow, r.primary_value_usd) for r in self.flagged_records
        ]
        graph = network.build_graph(trades, self.cfg.pseudo_partners)
        adj = graph.undirected(self.cfg.network_weight)
        part = network.louvain_partition(adj, self.seeds["trade_network"])
        cent = network.betweenness(graph.undirected("count"))
        touching: dict[str, list[float]] = {n: [] for n in graph.nodes}
        for r in self.flagged_records:
            c = self.composite.get(r.record_id)
            if c is None:
                continue
            for n in {r.reporter, r.partner}:
                if n in touching:
                    touching[n].append(c)
        avg_risk = {n: math.fsum(v) / len(v) if v else 0.0 for n, v in touching.items()}
        rows = network.transshipment_index(graph, cent, avg_risk)
        network.write_communities(part, self.path("communities.csv"))
        network.write_centrality(rows, self.path("centrality.csv"))
        self.m.counts.update(
            network_nodes=len(graph.nodes),
            network_edges=len(graph.count),
            communities=len(part.communities),
            modularity=part.modularity,
        )

    def explain(self) -> None:
        a = self.arr
        ids = a["record_id"]
        scored = np.array([int(i) in self.composite for i in ids], dtype=bool)
        mask = a["eligible"] & scored
        X = np.column_stack([a["is_vague"][mask].astype(float), a["log_value"][mask], a["log_weight"][mask]])
        y = np.array([self.composite[int(i)] for i in ids[mask]])
        rid = ids[mask]
        summary: dict[str, Any] = {"features": list(explain.FEATURE_NAMES), "status": "ok"}
        explanations: list[explain.ShapExplanation] = []
        if len(y) < 10:
            summary["status"] = f"skipped: {len(y)} scored rows"
            LOG.warning("explanation skipped: only %d scored rows", len(y))
        else:
            rng = np.random.default_rng(self.seeds["explain"])
            train = np.sort(rng.choice(len(y), size=min(len(y), self.cfg.shap_train_rows), replace=False))
            forest = explain.fit_surrogate_forest(
                X[train], y[train], seed=int(rng.integers(2**31)), n_trees=self.cfg.surrogate_trees,
                max_depth=self.cfg.surrogate_max_depth, min_leaf=self.cfg.surrogate_min_leaf,
            )
            bg = np.sort(rng.choice(train, size=min(len(train), self.cfg.shap_background), replace=False))
            chosen = np.sort(rng.choice(len(y), size=min(len(y), self.cfg.shap_explain_rows), replace=False))
            explanations = explain.explain_rows(forest, X[chosen], X[bg], rid[chosen])
            summary.update(
                n_train=int(len(train)),
                n_background=int(len(bg)),
                n_explained=len(explanations),
                baseline=explanations[0].baseline,
                mean_abs_shap=[{"feature": f, "mean_abs_phi": v}
                               for f, v in explain.mean_abs_shap_report(explanations)],
            )
        _write_json(self.path("shap_summary.json"), summary)
        if self.cfg.report_shap_values:
            _write_csv(
                self.path("shap_values.csv"),
                ["record_id", "baseline", *(f"phi_{f}" for f in explain.FEATURE_NAMES), "prediction"],
                ([e.record_id, repr(e.baseline), *map(repr, e.phi), repr(e.prediction)] for e in explanations),
            )
        self.m.counts["shap_explained"] = len(explanations)

    def trendline(self) -> None:
        a = self.arr
        elig = a["eligible"]
        codes = [self.by_id[int(i)].hs_code for i in a["record_id"][elig]]
        rep = trendline.divergence_report(
            codes, a["log_weight"][elig], a["log_value"][elig], self.cfg.high_risk_hs_codes
        )
        self.hr_mask = np.array([c[:6] in set(self.cfg.high_risk_hs_codes) for c in codes], dtype=bool)
        _write_json(self.path("trendlines.json"), trendline.report_dict(rep))
        self.m.counts["trendline_status"] = rep.status

    def reporting(self) -> None:
        a = self.arr
        elig = a["eligible"]
        scatter = []
        for rid_, lw, lv, hr in zip(a["record_id"][elig], a["log_weight"][elig], a["log_value"][elig], self.hr_mask):
            scatter.append((int(rid_), float(lw), float(lv), self.cluster_ids.get(int(rid_)), bool(hr)))
        prices: dict[str, list[float]] = {}
        for p in self.priced:
            prices.setdefault(p.hs_code, []).append(p.price_per_kg)
        flagged_routes = [(r.reporter, r.partner) for r in self.flagged_records]
        bundle = reporting.build_bundle(
            self.records, self.is_vague, self.composite, self.entries, flagged_routes, self.events, self.spikes,
            self.stats, prices, scatter, self.case_summary,
            histogram_routes=[reporting.parse_route(s) for s in self.cfg.histogram_routes],
            histogram_bins=self.cfg.histogram_bins, k=self.cfg.top_k, pseudo_partners=self.cfg.pseudo_partners,
        )
        if not self.cfg.report_plots:
            bundle.scatter_rows = []
        written = reporting.write_reports(bundle, self.out)
        drop = []
        if not self.cfg.report_plots:
            drop += [n for n in written if n.startswith("plot_")]
        if not self.cfg.report_memo:
            drop.append("memo.md")
        for name in drop:
            os.remove(os.path.join(self.out, name))
        self.m.outputs += [n for n in written if n not in drop]
        self.bundle = bundle


def run_pipeline(cfg: PipelineConfig, stop_after: str | None = None) -> RunManifest:
    """Run every stage in order, writing outputs and the manifest.

    Raises InputError before anything is written when the input is missing.
    A failing stage leaves a manifest naming it and raises StageError.
    """
    digest = prepare(cfg)
    manifest = RunManifest(config=cfg.snapshot(), input_sha256=digest, seeds=stage_seeds(cfg))
    run = _Run(cfg, manifest)
    stages: list[tuple[str, Callable[[], None]]] = [(s, getattr(run, s)) for s in STAGES]
    for name, fn in stages:
        t0 = time.perf_counter()
        try:
            fn()
        except InputError:
            manifest.status = "failed"
            manifest.failed_stage = name
            manifest.write(cfg.out_dir)
            raise
        except Exception as exc:
            manifest.status = "failed"
            manifest.failed_stage = name
            manifest.error = f"{type(exc).__name__}: {exc}"
            manifest.write(cfg.out_dir)
            raise StageError(name, exc) from exc
        manifest.timings[name] = time.perf_counter() - t0
        manifest.stages_completed.append(name)
        LOG.info("stage %s done in %.3f s", name, manifest.timings[name])
        if name == stop_after:
            break
    manifest.status = "ok"
    manifest.outputs.append(MANIFEST_NAME)
    manifest.write(cfg.out_dir)
    manifest._run = run  # type: ignore[attr-defined]
    return manifest


def run_ingest_only(cfg: PipelineConfig) -> RunManifest:
    """Parse and quarantine only; also writes the normalized records."""
    manifest = run_pipeline(cfg, stop_after="ingest")
    run = manifest._run  # type: ignore[attr-defined]
    with open(os.path.join(cfg.out_dir, "records.csv"), "w", newline="", encoding="utf-8") as fh:
        ingest.write_records(run.records, fh, cfg.column_mapping)
    manifest.outputs.append("records.csv")
    manifest.write(cfg.out_dir)
    return manifest


def load_manifest(path: str) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from exc
