"""Command-line entry point: analyze, ingest, report, synth."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields
from typing import Any, Sequence

from . import synthgen
from .config import KEY_DOCS, ConfigError, PipelineConfig, default_out_dir, from_mapping, load_config
from .ingest import ConfigurationError
from .pipeline import InputError, StageError, load_manifest, run_ingest_only, run_pipeline, sha256_file

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INPUT = 2
EXIT_STAGE = 3

LOG = logging.getLogger("tradeforensics")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="Flat YAML config file; flags override its values.")
    group = p.add_argument_group("config keys (flags override the config file)")
    for f in fields(PipelineConfig):
        doc = KEY_DOCS[f.name]
        ann = str(f.type)
        if f.name in ("input", "out_dir"):
            flags = ["--input"] if f.name == "input" else ["--out", "--out-dir"]
            group.add_argument(*flags, dest=f.name, default=None, help=doc)
        elif ann.startswith("list"):
            group.add_argument(_flag(f.name), dest=f.name, nargs="*", default=None, metavar="ITEM", help=doc)
        elif ann == "bool":
            group.add_argument(_flag(f.name), dest=f.name, action=argparse.BooleanOptionalAction,
                               default=None, help=doc)
        elif ann.startswith("int"):
            group.add_argument(_flag(f.name), dest=f.name, type=int, default=None, help=doc)
        elif ann == "float":
            group.add_argument(_flag(f.name), dest=f.name, type=float, default=None, help=doc)
        else:
            group.add_argument(_flag(f.name), dest=f.name, default=None, help=doc)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="tradeforensics",
        description="Forensic screening of customs trade records.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Log stage progress and timings.")
    sub = parser.add_subparsers(dest="command", metavar="{analyze,ingest,report,synth}", parser_class=_Parser)

    a = sub.add_parser("analyze", help="Run the full pipeline.")
    _add_config_flags(a)
    i = sub.add_parser("ingest", help="Parse the input and write the reject report only.")
    _add_config_flags(i)

    r = sub.add_parser("report", help="Re-emit every report from a prior run's manifest.")
    r.add_argument("--manifest", required=True, help="manifest.json of a previous run.")
    r.add_argument("--out", "--out-dir", dest="out_dir", default=None, help="Output directory.")

    s = sub.add_parser("synth", help="Generate a synthetic dataset with planted ground truth.")
    s.add_argument("--records", type=int, default=1000, help="Number of data lines.")
    s.add_argument("--seed", type=int, default=0, help="Generator seed.")
    s.add_argument("--outliers", type=int, default=40, help="Planted customs-review price outliers.")
    s.add_argument("--data-quality", type=int, default=0, help="Planted sub-kilogram price outliers.")
    s.add_argument("--vague", type=int, default=15, help="Planted vague descriptions.")
    s.add_argument("--mega", type=int, default=5, help="Planted mega-trades.")
    s.add_argument("--defect-rate", type=float, default=0.0, help="Fraction of malformed lines, in [0, 1).")
    s.add_argument("--out", "--out-dir", dest="out_dir", default=None, help="Output directory.")
    return parser


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config)
    overrides: dict[str, Any] = {}
    for f in fields(PipelineConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            overrides[f.name] = v
    cfg = from_mapping(overrides, base=cfg)
    if not cfg.out_dir:
        cfg.out_dir = default_out_dir()
    return cfg


def _run(cfg: PipelineConfig, ingest_only: bool) -> int:
    try:
        manifest = run_ingest_only(cfg) if ingest_only else run_pipeline(cfg)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as exc:
        if isinstance(exc.cause, ConfigurationError):
            print(f"config error: {exc.cause}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    for stage, secs in manifest.timings.items():
        LOG.info("%-14s %8.3f s", stage, secs)
    c = manifest.counts
    print(f"parsed={c['parsed']} rejected={c['rejected']}", end="")
    if not ingest_only:
        print(f" price_flags={c['price_flags']['total']} case_file={c['case_file_entries']}"
              f" mega_trades={c['mega_trades']}", end="")
    print(f" -> {cfg.out_dir}")
    return EXIT_OK


def _report(args: argparse.Namespace) -> int:
    try:
        prior = load_manifest(args.manifest)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        cfg = from_mapping(prior.get("config", {}))
    except (ConfigError, TypeError) as exc:
        print(f"config error: manifest snapshot invalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cfg.out_dir = args.out_dir or os.path.dirname(os.path.abspath(args.manifest))
    try:
        digest = sha256_file(cfg.input)
    except OSError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if digest != prior.get("input_sha256"):
        print(f"input error: {cfg.input} changed since the manifest was written", file=sys.stderr)
        return EXIT_INPUT
    return _run(cfg, ingest_only=False)


def _synth(args: argparse.Namespace) -> int:
    spec = synthgen.PlantSpec(
        n_records=args.records,
        n_price_outliers=args.outliers,
        n_data_quality=args.data_quality,
        n_vague=args.vague,
        n_mega_trades=args.mega,
        defect_rate=args.defect_rate,
        seed=args.seed,
    )
    try:
        data, truth = synthgen.generate_dataset(spec)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out_dir or default_out_dir()
    try:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "synthetic.csv"), "wb") as fh:
            fh.write(data)
        with open(os.path.join(out, "ground_truth.json"), "w", encoding="utf-8") as fh:
            fh.write(truth.to_json())
    except OSError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"wrote {args.records} lines -> {out}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    if args.command == "synth":
        return _synth(args)
    if args.command == "report":
        return _report(args)
    try:
        cfg = _config_from_args(args)
    except (ConfigError, ConfigurationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return _run(cfg, ingest_only=args.command == "ingest")


if __name__ == "__main__":
    sys.exit(main())
