"""Seeded synthetic customs datasets with planted ground truth.

Baseline prices are bounded within each HS group (uniform in log space), so
Tukey fences never fire on unplanted rows; every plant sits far beyond the
relevant detection threshold.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .features import DEFAULT_VAGUE_KEYWORDS, flag_vague
from .price_anomaly import stats_for

DEFAULT_BLOCKS: tuple[tuple[str, ...], ...] = (
    ("Germany", "France", "Netherlands", "Belgium", "Italy"),
    ("China", "Japan", "Rep. of Korea", "Viet Nam", "Thailand"),
    ("USA", "Canada", "Mexico", "Brazil", "Argentina"),
    ("India", "Malaysia", "Singapore", "Indonesia", "Philippines"),
)

GENERAL_HS = (
    "290311", "290312", "290313", "290314", "290315", "290321", "290322", "290323",
    "290329", "290341", "290342", "290343", "290344", "290345", "290346", "290347",
    "290361", "290362", "290369", "290381", "290382", "290389", "382471", "382472",
)
HIGH_RISK_HS = ("290377", "290379", "382478", "382499")

CLEAN_DESCRIPTIONS = (
    "Chlorodifluoromethane (HCFC-22), 99.9% pure",
    "Dichlorotrifluoroethanes (HCFC-123)",
    "Trichlorofluoromethane (CFC-11)",
    "Bromochlorodifluoromethane (Halon-1211)",
    "1,1,1-Trichloroethane, technical grade",
    "Pentafluoroethane (HFC-125)",
    "Difluoromethane (HFC-32), cylinders",
    "Tetrafluoroethane (HFC-134a)",
)
VAGUE_TEMPLATES = (
    "{kw} containing derivatives of methane, ethane or propane",
    "Refrigerant blend, {kw}",
    "Chemical products and preparations ({kw})",
    "Other organic compounds; {kw}",
)

HEADER = ["freqCode", "period", "reporterDesc", "flowDesc", "partnerDesc", "cmdCode",
          "cmdDesc", "netWgt", "primaryValue"]
DEFECT_REASONS = ("FieldCount", "NumericParse", "MissingRequired", "BadHsCode", "EncodingError")
_MONTHS = [(y, m) for y in (2020, 2021, 2022) for m in range(1, 13)]


@dataclass
class PlantSpec:
    n_records: int = 1000
    n_price_outliers: int = 40
    n_data_quality: int = 0
    n_vague: int = 15
    n_mega_trades: int = 5
    planted_slopes: tuple[float, float] = (1.0, 1.5)
    community_blocks: tuple[tuple[str, ...], ...] = DEFAULT_BLOCKS
    intra_block_bias: float = 0.85
    world_share: float = 0.05
    high_risk_share: float = 0.3
    dominant_route_share: float = 0.4
    vague_reporter_share: float = 0.6
    spike_month: tuple[int, int] = (2021, 3)
    vague_keywords: tuple[str, ...] = DEFAULT_VAGUE_KEYWORDS
    defect_rate: float = 0.0
    bom: bool = False
    seed: int = 0


@dataclass
class GroundTruth:
    price_outliers: list[int] = field(default_factory=list)
    data_quality_outliers: list[int] = field(default_factory=list)
    vague: list[int] = field(default_factory=list)
    mega_trades: list[int] = field(default_factory=list)
    defects: list[dict] = field(default_factory=list)
    communities: dict[str, int] = field(default_factory=dict)
    slopes: dict[str, float] = field(default_factory=dict)
    dominant_route: tuple[str, str] = ("", "")
    vague_reporter: str = ""
    spike_month: tuple[int, int] = (0, 0)
    high_risk_hs_codes: list[str] = field(default_factory=list)
    n_records: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        d = json.loads(text)
        d["dominant_route"] = tuple(d["dominant_route"])
        d["spike_month"] = tuple(d["spike_month"])
        return cls(**d)


def _validate(spec: PlantSpec) -> int:
    if spec.n_records < 1:
        raise ValueError("n_records must be positive")
    if not 0 <= spec.defect_rate < 1:
        raise ValueError("defect_rate must lie in [0, 1)")
    counts = (spec.n_price_outliers, spec.n_data_quality, spec.n_vague, spec.n_mega_trades)
    if min(counts) < 0:
        raise ValueError("plant counts must be non-negative")
    n_good = spec.n_records - round(spec.defect_rate * spec.n_records)
    if sum(counts) > n_good:
        raise ValueError(f"plants ({sum(counts)}) exceed well-formed records ({n_good})")
    if any(len(b) < 2 for b in spec.community_blocks) or not spec.community_blocks:
        raise ValueError("each community block needs at least two countries")
    for d in CLEAN_DESCRIPTIONS:
        if flag_vague(d, spec.vague_keywords):
            raise ValueError(f"keyword list matches baseline description {d!r}")
    return n_good


def _fmt_value(x: float, rng: np.random.Generator) -> str:
    s = f"{x:.2f}"
    if rng.random() < 0.2:
        s = f"{x:,.2f}"
    return s


def generate_dataset(spec: PlantSpec) -> tuple[bytes, GroundTruth]:
    n_good = _validate(spec)
    rng = np.random.default_rng(spec.seed)
    s_gen, s_hr = spec.planted_slopes

    # HS groups: national 8-digit extensions of the high-risk codes all
    # truncate to a listed 6-digit code.
    n_gen_groups = int(np.clip(n_good // 40, 4, len(GENERAL_HS)))
    n_hr_groups = int(np.clip(n_good // 60, 4, 16))
    gen_codes = list(GENERAL_HS[:n_gen_groups])
    hr_codes = [f"{HIGH_RISK_HS[i % 4]}{10 * (i // 4 + 1):02d}" for i in range(n_hr_groups)]
    codes = gen_codes + hr_codes
    is_hr_group = np.array([False] * n_gen_groups + [True] * n_hr_groups)
    centers = rng.uniform(1.0, 4.0, len(codes))
    slope = np.where(is_hr_group, s_hr, s_gen)
    level_noise = np.where(is_hr_group, rng.uniform(-0.15, 0.15, len(codes)), rng.uniform(-1.0, 1.0, len(codes)))
    base = np.where(is_hr_group, 1.8, 1.2)
    price_level = base + (slope - 1.0) * (centers - 2.5) + level_noise

    hr_pick = rng.random(n_good) < spec.high_risk_share
    group = np.where(
        hr_pick,
        n_gen_groups + rng.integers(n_hr_groups, size=n_good),
        rng.integers(n_gen_groups, size=n_good),
    )
    lw = centers[group] + rng.uniform(-0.3, 0.3, n_good)
    lp = price_level[group] + (slope[group] - 1.0) * (lw - centers[group]) + rng.uniform(-0.1, 0.1, n_good)
    weight = np.round(10.0**lw, 3)
    value = np.round(weight * 10.0**lp, 2)

    countries = [c for block in spec.community_blocks for c in block]
    block_of = {c: b for b, block in enumerate(spec.community_blocks) for c in block}
    reporter_idx = rng.integers(len(countries), size=n_good)
    reporters = [countries[i] for i in reporter_idx]
    partners = []
    for r in reporters:
        u = rng.random()
        if u < spec.world_share:
            partners.append("World")
            continue
        same = [c for c in spec.community_blocks[block_of[r]] if c != r]
        other = [c for c in countries if block_of[c] != block_of[r]]
        pool = same if (rng.random() < spec.intra_block_bias or not other) else other
        partners.append(pool[int(rng.integers(len(pool)))])
    flows = ["Export" if f else "Import" for f in rng.random(n_good) < 0.6]
    months = [_MONTHS[i] for i in rng.integers(len(_MONTHS), size=n_good)]
    descriptions = [CLEAN_DESCRIPTIONS[i] for i in rng.integers(len(CLEAN_DESCRIPTIONS), size=n_good)]

    baseline_stats = {g: stats_for(codes[g], (value[group == g] / weight[group == g]).tolist())
                      for g in np.unique(group)}

    # Plants: disjoint index sets, at most one price plant per eight group rows.
    order = rng.permutation(n_good)
    taken: set[int] = set()
    per_group: dict[int, int] = {}
    cap = {g: max(1, int((group == g).sum()) // 8) for g in np.unique(group)}

    def pick(n: int, capped: bool) -> list[int]:
        out = []
        for i in order:
            if len(out) == n:
                break
            i = int(i)
            if i in taken:
                continue
            g = int(group[i])
            if capped and per_group.get(g, 0) >= cap[g]:
                continue
            out.append(i)
            taken.add(i)
            if capped:
                per_group[g] = per_group.get(g, 0) + 1
        if len(out) < n:
            raise ValueError("dataset too small for the requested plants")
        return sorted(out)

    price_plants = pick(spec.n_price_outliers, True)
    dq_plants = pick(spec.n_data_quality, True)
    mega_plants = pick(spec.n_mega_trades, False)
    vague_plants = pick(spec.n_vague, False)

    dominant = (spec.community_blocks[0][0], spec.community_blocks[0][1])
    n_dom = round(spec.dominant_route_share * len(price_plants))
    for j, i in enumerate(price_plants):
        st = baseline_stats[int(group[i])]
        price = st.median + rng.uniform(5.0, 10.0) * st.iqr
        value[i] = round(weight[i] * price, 2)
        if j < n_dom:
            reporters[i], partners[i] = dominant
    for i in dq_plants:
        st = baseline_stats[int(group[i])]
        weight[i] = round(float(rng.uniform(0.1, 0.9)), 3)
        value[i] = round(weight[i] * (st.median + rng.uniform(5.0, 10.0) * st.iqr), 2)

    lv = np.log10(value)
    lw_now = np.log10(weight)
    mu_w, sd_w = lw_now.mean(), lw_now.std()
    mu_v, sd_v = lv.mean(), lv.std()
    for i in mega_plants:
        g = int(group[i])
        lp_i = price_level[g] + rng.uniform(-0.1, 0.1)
        z = 9.0 + rng.uniform(0.0, 1.0)
        while True:
            lw_i = mu_w + z * sd_w
            if (lw_i + lp_i - mu_v) / sd_v >= 8.0:
                break
            z += 0.5
        weight[i] = round(10.0**lw_i, 3)
        value[i] = round(weight[i] * 10.0**lp_i, 2)
        months[i] = spec.spike_month

    vague_reporter = spec.community_blocks[min(1, len(spec.community_blocks) - 1)][0]
    n_vr = round(spec.vague_reporter_share * len(vague_plants))
    kws = list(spec.vague_keywords)
    for j, i in enumerate(vague_plants):
        kw = kws[j % len(kws)]
        if j % 3 == 0:
            kw = kw.capitalize()
        descriptions[i] = VAGUE_TEMPLATES[j % len(VAGUE_TEMPLATES)].format(kw=kw)
        if j < n_vr:
            reporters[i] = vague_reporter
            if partners[i] == vague_reporter:
                partners[i] = "World"

    _check_price_plants(codes, group, value, weight, price_plants + dq_plants)

    # Assemble lines; defects replace well-formed lines at chosen positions.
    n_defects = spec.n_records - n_good
    defect_pos = set(rng.choice(spec.n_records, size=n_defects, replace=False).tolist()) if n_defects else set()
    truth_defects = []
    buf = io.BytesIO()
    if spec.bom:
        buf.write(b"\xef\xbb\xbf")
    buf.write(_csv_line(HEADER))
    good_i = 0
    for pos in range(spec.n_records):
        line_number = pos + 2
        if pos in defect_pos:
            reason = DEFECT_REASONS[int(rng.integers(len(DEFECT_REASONS)))]
            buf.write(_defect_line(reason, rng))
            truth_defects.append({"line_number": line_number, "reason": reason})
            continue
        i = good_i
        good_i += 1
        y, m = months[i]
        buf.write(_csv_line([
            "M", f"{y:04d}{m:02d}", reporters[i], flows[i], partners[i], codes[group[i]],
            descriptions[i], f"{weight[i]:.3f}", _fmt_value(float(value[i]), rng),
        ]))

    def ids(indices):
        return [int(i) + 1 for i in indices]

    truth = GroundTruth(
        price_outliers=ids(price_plants),
        data_quality_outliers=ids(dq_plants),
        vague=ids(vague_plants),
        mega_trades=ids(mega_plants),
        defects=truth_defects,
        communities={c: block_of[c] for c in countries},
        slopes={"general": float(s_gen), "high_risk": float(s_hr)},
        dominant_route=dominant,
        vague_reporter=vague_reporter,
        spike_month=tuple(spec.spike_month),
        high_risk_hs_codes=list(HIGH_RISK_HS),
        n_records=spec.n_records,
    )
    return buf.getvalue(), truth


def _check_price_plants(codes, group, value, weight, plants) -> None:
    # Prices as the parser will see them: formatted, then re-read.
    price = np.array([float(f"{v:.2f}") / float(f"{w:.3f}") for v, w in zip(value, weight)])
    for i in plants:
        g = group[i]
        st = stats_for(codes[g], price[group == g].tolist())
        if not price[i] > st.upper_fence:
            raise AssertionError(f"planted outlier {i} fell inside the fences of {codes[g]}")


def _csv_line(cells) -> bytes:
    out = io.StringIO()
    csv.writer(out, lineterminator="\n").writerow(cells)
    return out.getvalue().encode("utf-8")


def _defect_line(reason: str, rng: np.random.Generator) -> bytes:
    cells = ["M", "202105", "France", "Export", "Italy", "290322",
             "Dichlorotrifluoroethanes (HCFC-123)", "120.000", "5400.00"]
    if reason == "FieldCount":
        return _csv_line(cells[:-1])
    if reason == "NumericParse":
        cells[8] = "54O0.00" if rng.random() < 0.5 else "-5400.00"
        return _csv_line(cells)
    if reason == "MissingRequired":
        cells[2] = ""
        return _csv_line(cells)
    if reason == "BadHsCode":
        cells[5] = "29O322"
        return _csv_line(cells)
    if reason == "EncodingError":
        line = _csv_line(cells)
        return line.replace(b"5400.00", b"54\xff0.00")
    raise ValueError(reason)
