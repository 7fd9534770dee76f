"""
Command line interface.

    python -m app bench --data concrete.csv --partitions 10 --methods npae,poe \\
        --selectors knn,dnn,static --k 2,4,6,8,10 --seeds 0,1,2 --out report.json
    python -m app compare report.json [--csv summary.csv]

Exit codes: 0 success, 1 invalid configuration or input file, 2 stage failure.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from pydantic import ValidationError

from app.benchmark import compare_report, run_benchmark
from app.config import settings
from app.exceptions import BenchmarkStageError
from app.logging_config import setup_logging, setup_sentry
from app.models import RunConfig
from app.storage.reports import read_report

logger = logging.getLogger('dgpselect')

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_STAGE = 2


class ConfigError(Exception):
    """Invalid command line or configuration file."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise ConfigError(message)


def _csv_list(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def _int_list(value: str, flag: str) -> List[int]:
    try:
        return [int(item) for item in _csv_list(value)]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated integers, got '{value}'") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="python -m app", description="Distributed GP aggregation with expert selection")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    bench = commands.add_parser("bench", help="run the benchmark and write JSON/CSV reports")
    bench.add_argument("--config", type=Path, help="JSON run configuration; flags override its values")
    bench.add_argument("--data", type=Path, help="numeric CSV with a header row")
    bench.add_argument("--target-col", help="target column name or 0-based index (default: last)")
    bench.add_argument("--synthetic", type=int, metavar="N", help="use N points drawn from a GP prior instead of --data")
    bench.add_argument("--synthetic-dim", type=int, default=None, metavar="D")
    bench.add_argument("--partitions", type=int, help="number of experts M")
    bench.add_argument("--partition-method", choices=["kmeans", "random"])
    bench.add_argument("--train-frac", type=float)
    bench.add_argument("--methods", help="comma-separated: poe,gpoe,bcm,rbcm,npae")
    bench.add_argument("--beta-rule", choices=["uniform", "diff_entropy"])
    bench.add_argument("--selectors", help="comma-separated: knn,dnn,static,none")
    bench.add_argument("--k", help="comma-separated K values")
    bench.add_argument("--seeds", help="comma-separated seeds")
    bench.add_argument("--out", type=Path, help="JSON report path; the CSV is written next to it")
    bench.add_argument("--opt-iters", type=int, help="optimizer iterations per restart")
    bench.add_argument("--clf-epochs", type=int, help="classifier training epochs")
    bench.add_argument("--checkpoint-dir", type=Path)

    compare = commands.add_parser("compare", help="summarize a report against the unselected baseline")
    compare.add_argument("report", type=Path)
    compare.add_argument("--csv", type=Path, help="also write the summary table as CSV")
    return parser


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    """
    Merge the optional JSON config file with command line overrides.

    Raises:
        ConfigError: unreadable config file, malformed flag or failed validation
    """
    values: Dict[str, Any] = {}
    if args.config is not None:
        try:
            values = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"could not read config file {args.config}: {e}") from e
        if not isinstance(values, dict):
            raise ConfigError("config file must contain a JSON object")

    if args.data is not None:
        values["data_path"] = str(args.data)
    if args.target_col is not None:
        values["target_column"] = int(args.target_col) if args.target_col.lstrip("-").isdigit() else args.target_col
    if args.synthetic is not None:
        synthetic = dict(values.get("synthetic") or {})
        synthetic["n"] = args.synthetic
        if args.synthetic_dim is not None:
            synthetic["d"] = args.synthetic_dim
        values["synthetic"] = synthetic
        if args.data is None:
            values.pop("data_path", None)
    simple = {
        "partitions": args.partitions,
        "partition_method": args.partition_method,
        "train_fraction": args.train_frac,
        "beta_rule": args.beta_rule,
        "output_path": str(args.out) if args.out is not None else None,
        "checkpoint_dir": str(args.checkpoint_dir) if args.checkpoint_dir is not None else None,
    }
    values.update({key: value for key, value in simple.items() if value is not None})
    if args.methods is not None:
        values["methods"] = _csv_list(args.methods)
    if args.selectors is not None:
        values["selectors"] = _csv_list(args.selectors)
    if args.k is not None:
        values["k_values"] = _int_list(args.k, "--k")
    if args.seeds is not None:
        values["seeds"] = _int_list(args.seeds, "--seeds")
    if args.opt_iters is not None:
        values["optimizer"] = {**values.get("optimizer", {}), "iterations": args.opt_iters}
    if args.clf_epochs is not None:
        values["classifier"] = {**values.get("classifier", {}), "epochs": args.clf_epochs}
    values.setdefault("output_path", str(Path(settings.output_dir) / "report.json"))

    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def _bench(args: argparse.Namespace) -> int:
    config = run_config_from_args(args)
    try:
        report = run_benchmark(config)
    except BenchmarkStageError as e:
        print(f"benchmark failed: {e}", file=sys.stderr)
        return EXIT_STAGE
    print(f"{len(report.rows)} rows written to {config.output_path}")
    return EXIT_OK


def _compare(args: argparse.Namespace) -> int:
    try:
        report = read_report(args.report)
    except (OSError, ValidationError) as e:
        raise ConfigError(f"could not read report {args.report}: {e}") from e
    try:
        summary = compare_report(report)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    with pd.option_context("display.width", 200, "display.max_rows", None):
        print(summary.to_string(index=False, float_format=lambda v: f"{v:.6g}"))
    if args.csv is not None:
        args.csv.parent.mkdir(parents=True, exist_ok=True)
        summary.to_csv(args.csv, index=False, float_format="%.12g", lineterminator="\n")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        setup_logging(args.log_level or settings.log_level)
        setup_sentry()
        if args.command == "bench":
            return _bench(args)
        return _compare(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
