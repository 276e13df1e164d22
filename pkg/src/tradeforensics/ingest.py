"""Line-by-line ingestion of customs CSV exports.

Every physical line after the header either becomes a :class:`TradeRecord`
or a :class:`RejectRecord`; nothing is silently dropped and a bad line never
aborts the parse. Blank lines carry no data and are skipped.
"""
from __future__ import annotations

import csv
import enum
import io
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Mapping, NamedTuple, TextIO

LOGICAL_FIELDS = (
    "period",
    "reporter",
    "partner",
    "flow",
    "hs_code",
    "description",
    "value",
    "weight",
)

# UN Comtrade bulk export headers.
DEFAULT_MAPPING: dict[str, str] = {
    "period": "period",
    "reporter": "reporterDesc",
    "partner": "partnerDesc",
    "flow": "flowDesc",
    "hs_code": "cmdCode",
    "description": "cmdDesc",
    "value": "primaryValue",
    "weight": "netWgt",
}

EXCERPT_CHARS = 200
_REPLACEMENT = "\ufffd"
_BOM = "\ufeff"


class ConfigurationError(ValueError):
    """Column mapping is invalid or does not match the file header."""


class Flow(str, enum.Enum):
    IMPORT = "Import"
    EXPORT = "Export"
    OTHER = "Other"

    @classmethod
    def parse(cls, text: str) -> "Flow":
        t = text.strip().lower()
        if t in ("import", "m", "imports", "re-import"):
            return cls.IMPORT
        if t in ("export", "x", "exports", "re-export"):
            return cls.EXPORT
        return cls.OTHER


class RejectReason(str, enum.Enum):
    FIELD_COUNT = "FieldCount"
    NUMERIC_PARSE = "NumericParse"
    MISSING_REQUIRED = "MissingRequired"
    BAD_HS_CODE = "BadHsCode"
    ENCODING_ERROR = "EncodingError"


class Period(NamedTuple):
    year: int
    month: int | None = None

    def __str__(self) -> str:
        if self.month is None:
            return f"{self.year:04d}"
        return f"{self.year:04d}{self.month:02d}"


@dataclass(frozen=True)
class RawLine:
    line_number: int
    text: str


@dataclass(frozen=True)
class TradeRecord:
    record_id: int
    period: Period
    reporter: str
    partner: str
    flow: Flow
    hs_code: str
    description: str
    primary_value_usd: float
    net_wgt_kg: float


@dataclass(frozen=True)
class RejectRecord:
    line_number: int
    reason: RejectReason
    raw_excerpt: str


class _Reject(Exception):
    def __init__(self, reason: RejectReason, detail: str = ""):
        super().__init__(detail or reason.value)
        self.reason = reason


def validate_mapping(mapping: Mapping[str, str]) -> dict[str, str]:
    missing = [f for f in LOGICAL_FIELDS if not mapping.get(f)]
    if missing:
        raise ConfigurationError(f"column mapping lacks logical fields: {missing}")
    headers = [mapping[f] for f in LOGICAL_FIELDS]
    if len(set(headers)) != len(headers):
        raise ConfigurationError("column mapping maps two logical fields to one header")
    return {f: mapping[f] for f in LOGICAL_FIELDS}


def iter_raw_lines(stream: BinaryIO | TextIO) -> Iterator[RawLine]:
    """Yield physical lines with 1-based numbers.

    Byte streams are decoded line by line as UTF-8 with replacement, so a bad
    sequence only taints the line it sits on.
    """
    for number, line in enumerate(stream, start=1):
        if isinstance(line, bytes):
            line = line.decode("utf-8", errors="replace")
        yield RawLine(number, line.rstrip("\r\n"))


def _split(text: str) -> list[str]:
    # Line-at-a-time parsing means embedded newlines are unsupported; an odd
    # quote count is treated as a broken line rather than joined with the next.
    if text.count('"') % 2:
        raise _Reject(RejectReason.FIELD_COUNT, "unbalanced quotes")
    try:
        rows = list(csv.reader([text], strict=True))
    except csv.Error as exc:
        raise _Reject(RejectReason.FIELD_COUNT, str(exc)) from exc
    return rows[0] if rows else []


def parse_number(text: str, field: str, *, allow_empty: bool) -> float:
    t = text.strip()
    if _REPLACEMENT in t:
        raise _Reject(RejectReason.ENCODING_ERROR, f"{field}: undecodable bytes")
    if not t:
        if allow_empty:
            return 0.0
        raise _Reject(RejectReason.MISSING_REQUIRED, f"{field}: empty")
    try:
        x = float(t.replace(",", ""))
    except ValueError as exc:
        raise _Reject(RejectReason.NUMERIC_PARSE, f"{field}: {t!r}") from exc
    if not math.isfinite(x) or x < 0:
        raise _Reject(RejectReason.NUMERIC_PARSE, f"{field}: {t!r} out of range")
    return x + 0.0  # -0.0 -> 0.0


def parse_period(text: str) -> Period:
    t = text.strip()
    if _REPLACEMENT in t:
        raise _Reject(RejectReason.ENCODING_ERROR, "period: undecodable bytes")
    if not t:
        raise _Reject(RejectReason.MISSING_REQUIRED, "period: empty")
    if not (t.isascii() and t.isdigit()) or len(t) not in (4, 6):
        raise _Reject(RejectReason.NUMERIC_PARSE, f"period: {t!r}")
    year = int(t[:4])
    if len(t) == 4:
        return Period(year)
    month = int(t[4:])
    if not 1 <= month <= 12:
        raise _Reject(RejectReason.NUMERIC_PARSE, f"period: month {month}")
    return Period(year, month)


def _normalize(fields: Mapping[str, str], record_id: int) -> TradeRecord:
    reporter = fields["reporter"].strip()
    if not reporter:
        raise _Reject(RejectReason.MISSING_REQUIRED, "reporter: empty")
    partner = fields["partner"].strip()
    if not partner:
        raise _Reject(RejectReason.MISSING_REQUIRED, "partner: empty")

    hs = fields["hs_code"].strip()
    if _REPLACEMENT in hs:
        raise _Reject(RejectReason.ENCODING_ERROR, "hs_code: undecodable bytes")
    if not hs:
        raise _Reject(RejectReason.MISSING_REQUIRED, "hs_code: empty")
    if not (hs.isascii() and hs.isdigit()) or not 2 <= len(hs) <= 10:
        raise _Reject(RejectReason.BAD_HS_CODE, f"hs_code: {hs!r}")

    period = parse_period(fields["period"])
    value = parse_number(fields["value"], "value", allow_empty=False)
    weight = parse_number(fields["weight"], "weight", allow_empty=True)

    return TradeRecord(
        record_id=record_id,
        period=period,
        reporter=reporter,
        partner=partner,
        flow=Flow.parse(fields["flow"]),
        hs_code=hs,
        description=fields["description"].strip(),
        primary_value_usd=value,
        net_wgt_kg=weight,
    )


def normalize_record(
    fields: Mapping[str, str], record_id: int = 1, line_number: int = 1, raw: str | None = None
) -> TradeRecord | RejectRecord:
    """Turn a logical-name -> raw string map into a record or a reject.

    ``raw`` is the source line used for the reject excerpt; when omitted the
    cells are re-joined in logical field order.
    """
    try:
        return _normalize(fields, record_id)
    except _Reject as exc:
        if raw is None:
            raw = ",".join(fields.get(f, "") for f in LOGICAL_FIELDS)
        return RejectRecord(line_number, exc.reason, raw[:EXCERPT_CHARS])


def parse_stream(
    stream: BinaryIO | TextIO | Iterable[str] | Iterable[bytes],
    mapping: Mapping[str, str] = DEFAULT_MAPPING,
) -> tuple[list[TradeRecord], list[RejectRecord]]:
    """Parse a customs CSV into records and quarantined rejects.

    The first non-empty line is the header. ``record_id`` counts accepted
    records from 1 in input order.
    """
    mapping = validate_mapping(mapping)
    lines = iter_raw_lines(stream)  # type: ignore[arg-type]

    header: list[str] | None = None
    for raw in lines:
        text = raw.text.lstrip(_BOM) if header is None else raw.text
        if not text.strip():
            continue
        try:
            header = [h.strip() for h in _split(text)]
        except _Reject as exc:
            raise ConfigurationError(f"unparseable header: {exc}") from exc
        break
    if header is None:
        raise ConfigurationError("input has no header line")

    missing = [col for col in mapping.values() if col not in header]
    if missing:
        raise ConfigurationError(f"header lacks mapped columns: {missing}")
    index = {field: header.index(col) for field, col in mapping.items()}
    width = len(header)

    records: list[TradeRecord] = []
    rejects: list[RejectRecord] = []
    for raw in lines:
        if not raw.text.strip():
            continue
        try:
            cells = _split(raw.text)
            if len(cells) != width:
                raise _Reject(RejectReason.FIELD_COUNT, f"{len(cells)} fields, expected {width}")
            fields = {field: cells[i] for field, i in index.items()}
            records.append(_normalize(fields, len(records) + 1))
        except _Reject as exc:
            rejects.append(RejectRecord(raw.line_number, exc.reason, raw.text[:EXCERPT_CHARS]))
    return records, rejects


def parse_file(
    path: str | os.PathLike, mapping: Mapping[str, str] = DEFAULT_MAPPING
) -> tuple[list[TradeRecord], list[RejectRecord]]:
    with open(path, "rb") as fh:
        return parse_stream(fh, mapping)


def format_number(x: float) -> str:
    return repr(float(x))


def write_records(
    records: Iterable[TradeRecord], out: TextIO, mapping: Mapping[str, str] = DEFAULT_MAPPING
) -> None:
    """Serialize records with the given column headers; re-parsing is lossless."""
    mapping = validate_mapping(mapping)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow([mapping[f] for f in LOGICAL_FIELDS])
    for r in records:
        writer.writerow([
            str(r.period),
            r.reporter,
            r.partner,
            r.flow.value,
            r.hs_code,
            r.description,
            format_number(r.primary_value_usd),
            format_number(r.net_wgt_kg),
        ])


def write_rejects(rejects: Iterable[RejectRecord], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["line_number", "reason", "raw_excerpt"])
        for r in rejects:
            writer.writerow([r.line_number, r.reason.value, r.raw_excerpt])


def records_to_text(records: Iterable[TradeRecord], mapping: Mapping[str, str] = DEFAULT_MAPPING) -> str:
    buf = io.StringIO()
    write_records(records, buf, mapping)
    return buf.getvalue()


def data_line_count(path: str | os.PathLike | Path) -> int:
    """Non-blank lines after the header; the conservation denominator."""
    seen_header = False
    n = 0
    with open(path, "rb") as fh:
        for line in fh:
            if not line.lstrip(b"\xef\xbb\xbf").strip():
                continue
            if not seen_header:
                seen_header = True
                continue
            n += 1
    return n
