"""
Report writers: ``report.json`` plus plot-ready CSV tables.

CSV files follow RFC 4180 (``csv`` module defaults, CRLF rows). Floats are
written with their shortest round-trip repr, so two identical runs produce
byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

from pydantic import BaseModel

from .exceptions import ReportIOError
from .harness.trainer import TrainLogEntry
from .logging_config import get_logger
from .models import (
    DiagnosticsReport,
    ExperimentConfig,
    GridConfig,
    GridSummary,
    MeanStd,
    RunReport,
)

logger = get_logger("reporting")

RUN_FILES = (
    "report.json",
    "gd.csv",
    "gm.csv",
    "indexes.csv",
    "histogram.csv",
    "routing.csv",
    "metrics.csv",
    "trainlog.csv",
)


def write_json(path: Path, document: BaseModel) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(document.model_dump_json(indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise ReportIOError(f"cannot write {path.name}: {e}", path=str(path)) from e


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        raise ReportIOError(f"cannot write {path.name}: {e}", path=str(path)) from e


def _matrix_rows(task_ids: List[str], matrix: List[List[float]]) -> List[List[object]]:
    return [[task_id, *row] for task_id, row in zip(task_ids, matrix)]


def write_diagnostics_tables(out_dir: Path, diag: Optional[DiagnosticsReport]) -> None:
    """gd.csv, gm.csv, indexes.csv and histogram.csv; header-only without a study."""
    task_ids = diag.task_ids if diag else []
    write_csv(out_dir / "gd.csv", ["task_id", *task_ids],
              _matrix_rows(task_ids, diag.gd) if diag else [])
    write_csv(out_dir / "gm.csv", ["task_id", *task_ids],
              _matrix_rows(task_ids, diag.gm) if diag else [])
    write_csv(
        out_dir / "indexes.csv",
        ["task_id", "index", "normalized_index"],
        zip(task_ids, diag.indexes, diag.normalized_indexes) if diag else [],
    )
    hist_rows: List[List[object]] = []
    if diag:
        h = diag.histogram
        hist_rows = [
            [h.edges[i], h.edges[i + 1], h.counts[i], h.proportions[i]]
            for i in range(len(h.counts))
        ]
    write_csv(out_dir / "histogram.csv", ["bin_low", "bin_high", "count", "proportion"],
              hist_rows)


def write_run_report(out_dir: Path, report: RunReport, log: Sequence[TrainLogEntry]) -> None:
    """Write every run file; diagnostics tables are header-only when the study is off."""
    write_json(out_dir / "report.json", report)
    write_diagnostics_tables(out_dir, report.diagnostics)

    n_experts = len(report.routing[0].weights[0]) if report.routing else 0
    routing_rows = [
        [r.stage, task_id, *weights, count]
        for r in report.routing
        for task_id, weights, count in zip(r.task_ids, r.weights, r.token_counts)
    ]
    write_csv(
        out_dir / "routing.csv",
        ["stage", "task_id", *(f"expert_{k}" for k in range(n_experts)), "token_count"],
        routing_rows,
    )

    write_csv(
        out_dir / "metrics.csv",
        ["task_id", "tag", "head_kind", "metric", "value", "primary"],
        [
            [m.task_id, m.tag, m.head_kind, name, value, int(name == m.primary)]
            for m in report.metrics
            for name, value in sorted(m.values.items())
        ],
    )
    write_csv(
        out_dir / "trainlog.csv",
        ["iteration", "task_id", "loss", "lr"],
        ([e.iteration, e.task_id, e.loss, e.lr] for e in log),
    )
    logger.info("run report written", extra={"run_id": report.name, "path": str(out_dir)})


def _mean_or_blank(value: Optional[MeanStd]) -> object:
    return value.mean if value is not None else ""


def write_grid_summary(out_dir: Path, summary: GridSummary) -> None:
    write_json(out_dir / "summary.json", summary)
    header = ["variant", "replicates"]
    for task_id in summary.task_ids:
        header += [f"{task_id}_mean", f"{task_id}_std"]
    header += ["total_delta_mean", "total_delta_std"]
    header += [f"delta_{task_id}" for task_id in summary.task_ids]
    header += ["high_mass_mean", "normalized_index_std_mean", "undefined_deltas"]

    rows = []
    for cell in summary.cells:
        row: List[object] = [cell.variant, cell.replicates]
        for task_id in summary.task_ids:
            row += [cell.metrics[task_id].mean, cell.metrics[task_id].std]
        total = cell.total_delta
        row += [total.mean, total.std] if total else ["", ""]
        row += [_mean_or_blank(cell.per_task_delta[task_id]) for task_id in summary.task_ids]
        row += [_mean_or_blank(cell.high_mass), _mean_or_blank(cell.normalized_index_std)]
        row.append(" ".join(cell.undefined_deltas))
        rows.append(row)
    write_csv(out_dir / "summary.csv", header, rows)
    logger.info("grid summary written", extra={"run_id": summary.name, "path": str(out_dir)})


def write_schemas(out_dir: Path) -> List[Path]:
    """JSON schemas of every config and report document."""
    documents = {
        "experiment.schema.json": ExperimentConfig,
        "grid.schema.json": GridConfig,
        "report.schema.json": RunReport,
        "summary.schema.json": GridSummary,
    }
    written = []
    for filename, model in documents.items():
        path = out_dir / filename
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            path.write_text(
                json.dumps(model.model_json_schema(), indent=2, sort_keys=True) + "\n",
                encoding="utf-8",
            )
        except OSError as e:
            raise ReportIOError(f"cannot write {filename}: {e}", path=str(path)) from e
        written.append(path)
    return written
