"""Pipeline configuration: flat YAML keys, documented defaults, range checks."""
from __future__ import annotations

import os
import zlib
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping

import numpy as np
import yaml

from .features import DEFAULT_VAGUE_KEYWORDS
from .ingest import DEFAULT_MAPPING
from .trendline import DEFAULT_HIGH_RISK_HS

OUT_ENV_VAR = "TRADEFORENSICS_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    input: str = ""
    out_dir: str = ""
    column_period: str = DEFAULT_MAPPING["period"]
    column_reporter: str = DEFAULT_MAPPING["reporter"]
    column_partner: str = DEFAULT_MAPPING["partner"]
    column_flow: str = DEFAULT_MAPPING["flow"]
    column_hs_code: str = DEFAULT_MAPPING["hs_code"]
    column_description: str = DEFAULT_MAPPING["description"]
    column_value: str = DEFAULT_MAPPING["value"]
    column_weight: str = DEFAULT_MAPPING["weight"]
    vague_keywords: list[str] = field(default_factory=lambda: list(DEFAULT_VAGUE_KEYWORDS))
    seed: int = 0
    clusters: int = 4
    kmeans_seed: int | None = None
    kmeans_max_iter: int = 300
    kmeans_tol: float = 1e-6
    iqr_multiplier: float = 1.5
    min_group_size: int = 4
    iforest_trees: int = 100
    iforest_subsample: int = 256
    iforest_seed: int | None = None
    contamination: float = 0.01
    high_risk_hs_codes: list[str] = field(default_factory=lambda: list(DEFAULT_HIGH_RISK_HS))
    pseudo_partners: list[str] = field(default_factory=lambda: ["World"])
    network_weight: str = "count"
    louvain_seed: int | None = None
    surrogate_trees: int = 20
    surrogate_max_depth: int = 6
    surrogate_min_leaf: int = 5
    surrogate_seed: int | None = None
    shap_train_rows: int = 20000
    shap_background: int = 100
    shap_explain_rows: int = 1000
    top_k: int = 15
    histogram_routes: list[str] = field(default_factory=list)
    histogram_bins: int = 20
    report_plots: bool = True
    report_memo: bool = True
    report_shap_values: bool = True

    @property
    def column_mapping(self) -> dict[str, str]:
        return {
            "period": self.column_period,
            "reporter": self.column_reporter,
            "partner": self.column_partner,
            "flow": self.column_flow,
            "hs_code": self.column_hs_code,
            "description": self.column_description,
            "value": self.column_value,
            "weight": self.column_weight,
        }

    def snapshot(self) -> dict[str, Any]:
        """Everything that influences outputs; out_dir is excluded."""
        d = asdict(self)
        d.pop("out_dir")
        return d


# Key documentation shown by --help and the README.
KEY_DOCS: dict[str, str] = {
    "input": "Path of the customs CSV to analyze.",
    "out_dir": f"Output directory (default: ${OUT_ENV_VAR}, else ./out).",
    "column_period": "Header of the period column (YYYY or YYYYMM).",
    "column_reporter": "Header of the reporting-country column.",
    "column_partner": "Header of the partner-country column.",
    "column_flow": "Header of the trade-flow column (Import/Export).",
    "column_hs_code": "Header of the HS commodity code column.",
    "column_description": "Header of the commodity description column.",
    "column_value": "Header of the USD value column.",
    "column_weight": "Header of the net weight (kg) column.",
    "vague_keywords": "Case-insensitive substrings marking a vague description.",
    "seed": "Master seed; per-stage seeds derive from it unless set explicitly.",
    "clusters": "K-Means cluster count, >= 1.",
    "kmeans_seed": "Explicit K-Means seed (null = derived from seed).",
    "kmeans_max_iter": "Maximum Lloyd iterations, >= 1.",
    "kmeans_tol": "Centroid-shift convergence tolerance, > 0.",
    "iqr_multiplier": "Tukey fence multiplier, > 0.",
    "min_group_size": "Smallest HS group that is screened for price outliers, >= 1.",
    "iforest_trees": "Isolation Forest tree count, >= 1.",
    "iforest_subsample": "Isolation Forest subsample size, >= 2.",
    "iforest_seed": "Explicit Isolation Forest seed (null = derived).",
    "contamination": "Fraction flagged as mega-trades, in (0, 0.5).",
    "high_risk_hs_codes": "Six-digit HS codes forming the high-risk trendline population.",
    "pseudo_partners": "Aggregate partner names left out of the network graph.",
    "network_weight": "Edge weight for communities: count or value.",
    "louvain_seed": "Shuffle seed for the Louvain sweep (null = sorted order).",
    "surrogate_trees": "Trees in the explanation surrogate forest, >= 1.",
    "surrogate_max_depth": "Surrogate tree depth limit, >= 1.",
    "surrogate_min_leaf": "Minimum rows per surrogate leaf, >= 1.",
    "surrogate_seed": "Explicit surrogate/sampling seed (null = derived).",
    "shap_train_rows": "Cap on surrogate training rows (seeded subsample), >= 10.",
    "shap_background": "Background sample size for Shapley values, >= 1.",
    "shap_explain_rows": "Rows explained with Shapley values, >= 1.",
    "top_k": "Length of ranked report lists, >= 1.",
    "histogram_routes": "Routes 'Reporter->Partner' for price histograms (empty = top hotspot).",
    "histogram_bins": "Equal-width histogram bin count, >= 1.",
    "report_plots": "Write plot data files.",
    "report_memo": "Write memo.md.",
    "report_shap_values": "Write per-row shap_values.csv.",
}

_INT_MIN = {
    "clusters": 1, "kmeans_max_iter": 1, "min_group_size": 1, "iforest_trees": 1, "iforest_subsample": 2,
    "surrogate_trees": 1, "surrogate_max_depth": 1, "surrogate_min_leaf": 1, "shap_train_rows": 10,
    "shap_background": 1, "shap_explain_rows": 1, "top_k": 1, "histogram_bins": 1,
}
_STR_LISTS = ("vague_keywords", "high_risk_hs_codes", "pseudo_partners", "histogram_routes")
_OPTIONAL_SEEDS = ("kmeans_seed", "iforest_seed", "louvain_seed", "surrogate_seed")
_BOOLS = ("report_plots", "report_memo", "report_shap_values")


def _check_int(name: str, v: Any, lo: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name} must be an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{name} must be >= {lo}, got {v}")
    return v


def _check_float(name: str, v: Any) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name} must be a number, got {v!r}")
    return float(v)


def validate(cfg: PipelineConfig) -> PipelineConfig:
    for name, lo in _INT_MIN.items():
        _check_int(name, getattr(cfg, name), lo)
    _check_int("seed", cfg.seed, 0)
    for name in _OPTIONAL_SEEDS:
        if getattr(cfg, name) is not None:
            _check_int(name, getattr(cfg, name), 0)
    cfg.kmeans_tol = _check_float("kmeans_tol", cfg.kmeans_tol)
    cfg.iqr_multiplier = _check_float("iqr_multiplier", cfg.iqr_multiplier)
    cfg.contamination = _check_float("contamination", cfg.contamination)
    if cfg.kmeans_tol <= 0:
        raise ConfigError("kmeans_tol must be > 0")
    if cfg.iqr_multiplier <= 0:
        raise ConfigError("iqr_multiplier must be > 0")
    if not 0 < cfg.contamination < 0.5:
        raise ConfigError("contamination must lie in (0, 0.5)")
    if cfg.network_weight not in ("count", "value"):
        raise ConfigError("network_weight must be 'count' or 'value'")
    for name in _STR_LISTS:
        v = getattr(cfg, name)
        if not isinstance(v, list) or not all(isinstance(s, str) for s in v):
            raise ConfigError(f"{name} must be a list of strings")
    if not [k for k in cfg.vague_keywords if k.strip()]:
        raise ConfigError("vague_keywords must contain at least one keyword")
    for code in cfg.high_risk_hs_codes:
        if not (code.isascii() and code.isdigit() and len(code) == 6):
            raise ConfigError(f"high_risk_hs_codes entries must be 6 digits, got {code!r}")
    for route in cfg.histogram_routes:
        if "->" not in route:
            raise ConfigError(f"histogram route must look like 'Reporter->Partner', got {route!r}")
    for name in _BOOLS:
        if not isinstance(getattr(cfg, name), bool):
            raise ConfigError(f"{name} must be true or false")
    for name in ("input", "out_dir") + tuple(f.name for f in fields(cfg) if f.name.startswith("column_")):
        if not isinstance(getattr(cfg, name), str):
            raise ConfigError(f"{name} must be a string")
    return cfg


def from_mapping(values: Mapping[str, Any], base: PipelineConfig | None = None) -> PipelineConfig:
    known = {f.name for f in fields(PipelineConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    data = asdict(base) if base is not None else asdict(PipelineConfig())
    data.update(values)
    for name in _STR_LISTS:
        if isinstance(data[name], tuple):
            data[name] = list(data[name])
    # YAML reads bare numerals as ints; HS codes must stay strings.
    if isinstance(data["high_risk_hs_codes"], list):
        data["high_risk_hs_codes"] = [str(c) for c in data["high_risk_hs_codes"]]
    return validate(PipelineConfig(**data))


def load_config(path: str | os.PathLike | None) -> PipelineConfig:
    """Read a flat YAML mapping; an empty or absent file yields the defaults."""
    if path is None:
        return validate(PipelineConfig())
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must be a flat key-value mapping")
    for k, v in raw.items():
        if isinstance(v, dict):
            raise ConfigError(f"config key {k!r} must not be nested")
    return from_mapping(raw)


def derive_seed(master: int, stage: str) -> int:
    """Stable per-stage seed from the master seed and the stage name."""
    ss = np.random.SeedSequence([master, zlib.crc32(stage.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def stage_seeds(cfg: PipelineConfig) -> dict[str, int | None]:
    def pick(explicit: int | None, stage: str) -> int:
        return explicit if explicit is not None else derive_seed(cfg.seed, stage)

    return {
        "master": cfg.seed,
        "archetypes": pick(cfg.kmeans_seed, "archetypes"),
        "mega_trade": pick(cfg.iforest_seed, "mega_trade"),
        "explain": pick(cfg.surrogate_seed, "explain"),
        # Louvain defaults to the sorted sweep; no seed is consumed.
        "trade_network": cfg.louvain_seed,
    }


def default_out_dir() -> str:
    return os.environ.get(OUT_ENV_VAR) or "out"
