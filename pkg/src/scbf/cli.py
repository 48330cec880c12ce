"""Command-line experiment runner.

    scbf run CONFIG [--seed N] [--out-dir DIR] [--loops N] [--jobs N]
    scbf compare CONFIG [...same flags]

Log verbosity comes from the ``SCBF_LOG_LEVEL`` environment variable
(default ``WARNING``).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig, load_config, method_labels
from .data import split_partition
from .exceptions import ConfigError
from .federation import RoundRecord, load_cohort, run_federation
from .metrics import comm_savings, total_uploaded

__all__ = ["ROUNDS_COLUMNS", "main", "run", "compare", "write_rounds", "merged_rows"]

logger = logging.getLogger("scbf")

ROUNDS_COLUMNS = (
    "loop",
    "auc_roc",
    "auc_pr",
    "uploaded_params",
    "cumulative_uploaded",
    "pruned_total",
    "seconds",
)
_METRIC_COLUMNS = ROUNDS_COLUMNS[1:]


def _row(record: RoundRecord) -> list:
    return [
        record.global_loop,
        repr(record.auc_roc),
        repr(record.auc_pr),
        record.uploaded_params,
        record.cumulative_uploaded,
        record.neurons_pruned_total,
        f"{record.wall_clock_seconds:.6f}",
    ]


class _RoundsWriter:
    """Streams rows to rounds.csv so a failed run keeps its finished loops."""

    def __init__(self, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = path.open("w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(ROUNDS_COLUMNS)
        self._fh.flush()

    def __call__(self, record: RoundRecord):
        self._writer.writerow(_row(record))
        self._fh.flush()

    def close(self):
        self._fh.close()


def write_rounds(path, records) -> None:
    writer = _RoundsWriter(Path(path))
    try:
        for r in records:
            writer(r)
    finally:
        writer.close()


def _apply_overrides(configs, args) -> list[ExperimentConfig]:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if args.loops is not None:
        overrides["global_loops"] = args.loops
    if args.jobs is not None:
        overrides["n_jobs"] = args.jobs
    return [replace(c, **overrides) for c in configs] if overrides else list(configs)


def _baseline_index(configs) -> int:
    for i, c in enumerate(configs):
        if c.method.startswith("fedavg"):
            return i
    return 0


def _execute(configs: list[ExperimentConfig], nested: bool):
    """Run every method on one shared split; returns (labels, records per method, seconds)."""
    first = configs[0]
    cohort = load_cohort(first)
    partition = split_partition(cohort, first.n_clients, first.split_seed(), first.data.stratify)
    out_dir = Path(first.out_dir)
    labels = method_labels(configs)
    all_records = []
    started = time.perf_counter()
    for label, config in zip(labels, configs):
        path = out_dir / label / "rounds.csv" if nested else out_dir / "rounds.csv"
        writer = _RoundsWriter(path)
        try:
            result = run_federation(partition, config, on_record=writer)
        finally:
            writer.close()
        all_records.append(result.records)
    return labels, all_records, time.perf_counter() - started


def _summary(configs, labels, all_records, seconds) -> dict:
    methods = {}
    for label, config, records in zip(labels, configs, all_records):
        last = records[-1] if records else None
        entry = {"method": config.method}
        if config.channel_based:
            entry.update(alpha=config.alpha, selection_mode=config.selection_mode)
        methods[label] = {
            **entry,
            "final_auc_roc": last.auc_roc if last else None,
            "final_auc_pr": last.auc_pr if last else None,
            "total_uploaded": total_uploaded(records),
            "neurons_pruned": last.neurons_pruned_total if last else 0,
            "seconds": sum(r.wall_clock_seconds for r in records),
        }
    summary = {"global_loops": configs[0].global_loops, "methods": methods}
    if len(configs) >= 2:
        base = _baseline_index(configs)
        savings = {}
        for i, label in enumerate(labels):
            if i == base:
                continue
            try:
                savings[label] = comm_savings(all_records[i], all_records[base])
            except ValueError:
                savings[label] = None
        summary["baseline"] = labels[base]
        summary["comm_savings"] = savings
    summary["total_wall_seconds"] = seconds
    return summary


def _write_summary(out_dir, summary):
    path = Path(out_dir) / "summary.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")


def merged_rows(labels, all_records) -> tuple[list[str], list[list]]:
    """Header and rows of the per-loop comparison table."""
    header = ["loop"] + [f"{label}_{col}" for label in labels for col in _METRIC_COLUMNS]
    n = max((len(r) for r in all_records), default=0)
    rows = []
    for i in range(n):
        row = [i + 1]
        for records in all_records:
            row.extend(_row(records[i])[1:] if i < len(records) else [""] * len(_METRIC_COLUMNS))
        rows.append(row)
    return header, rows


def run(configs: list[ExperimentConfig]) -> dict:
    """Run the listed methods and write rounds.csv plus summary.json."""
    labels, all_records, seconds = _execute(configs, nested=len(configs) > 1)
    summary = _summary(configs, labels, all_records, seconds)
    _write_summary(configs[0].out_dir, summary)
    return summary


def compare(configs: list[ExperimentConfig]) -> dict:
    """Like :func:`run`, plus a merged compare.csv with one column group per method."""
    if len(configs) < 2:
        raise ConfigError("methods: compare needs at least two methods")
    labels, all_records, seconds = _execute(configs, nested=True)
    header, rows = merged_rows(labels, all_records)
    out = Path(configs[0].out_dir)
    with (out / "compare.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    summary = _summary(configs, labels, all_records, seconds)
    _write_summary(out, summary)
    return summary


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scbf", description="Federated learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run every method listed in a config file"),
        ("compare", "run >= 2 methods and write a merged per-loop CSV"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="YAML experiment config")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out-dir", help="override the output directory")
        p.add_argument("--loops", type=int, help="override the number of global loops")
        p.add_argument("--jobs", type=int, help="threads for parallel client training")
    return parser


def main(argv=None) -> int:
    level = os.environ.get("SCBF_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        configs = _apply_overrides(load_config(args.config), args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        summary = (compare if args.command == "compare" else run)(configs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        logger.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
