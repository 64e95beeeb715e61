"""
Experiment orchestration: single runs, ablation grids and diagnostics-only
studies of a saved checkpoint.

Every random stream is derived from the run seed and a stream name, so a
run is a pure function of its config. Grid replicate r of every variant
uses the seed derived from (grid seed, r); variants are therefore compared
on paired data.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pydantic

from . import __version__
from .checkpoint import load_checkpoint, load_state_dict, save_checkpoint, state_dict
from .connector import ConnectorKind, RoutingTable
from .exceptions import ContractError
from .harness import (
    MetricTable,
    ToyMultiTaskModel,
    TrainResult,
    TaskSuite,
    WatchedScope,
    collect_routing,
    delta_metric,
    evaluate,
    make_task_suite,
    train,
    watched_parameters,
)
from .interference import analyze, collect_gradients
from .logging_config import get_logger, log_cell, log_run_summary, setup_logging
from .models import (
    DeltaReport,
    DiagnosticsReport,
    DiagnosticsSettings,
    ExperimentConfig,
    GridCellSummary,
    GridConfig,
    GridSummary,
    HistogramReport,
    MeanStd,
    RoutingReport,
    RunReport,
    TaskMetricRow,
    TrainingSummary,
)
from .numerics import derive_seed, make_rng
from .reporting import (
    write_diagnostics_tables,
    write_grid_summary,
    write_json,
    write_run_report,
)
from .routers import RouterKind

logger = get_logger("experiment")


def versions() -> Dict[str, str]:
    return {"cmoe-lab": __version__, "numpy": np.__version__, "pydantic": pydantic.VERSION}


def build(cfg: ExperimentConfig) -> Tuple[TaskSuite, ToyMultiTaskModel]:
    """The suite and the freshly initialized model a config describes."""
    suite = make_task_suite(cfg.task_specs(), make_rng(cfg.seed, "suite"), cfg.geometry())
    model_cfg = cfg.to_model_config()
    if (model_cfg.connector == ConnectorKind.CMOE
            and model_cfg.cmoe.router_kind == RouterKind.HARD
            and model_cfg.cmoe.n_experts != len(suite.visual_task_ids)):
        logger.warning(
            "hard routing with N != task count; token type is the task index mod N",
            extra={"run_id": cfg.name, "n_experts": model_cfg.cmoe.n_experts},
        )
    return suite, ToyMultiTaskModel(suite, model_cfg, make_rng(cfg.seed, "model"))


def run_diagnostics(
    model: ToyMultiTaskModel,
    suite: TaskSuite,
    settings: DiagnosticsSettings,
    seed: int,
    batch_size: int,
    stage: str,
) -> DiagnosticsReport:
    """GD, GM, tug-of-war indexes and the statistics-score histogram for the current parameters."""
    watched = watched_parameters(model, settings.watched)
    if settings.watched == WatchedScope.CONNECTOR:
        task_ids = suite.visual_task_ids
    else:
        task_ids = suite.task_ids
    excluded = [t for t in suite.task_ids if t not in task_ids]

    samples = collect_gradients(
        model, suite, settings.batches_per_task, watched,
        make_rng(seed, "diagnostics"), batch_size=batch_size, task_ids=task_ids,
    )
    study = analyze(samples)
    hist = study.histogram
    return DiagnosticsReport(
        stage=stage,
        watched=settings.watched.value,
        task_ids=study.matrices.task_ids,
        excluded_tasks=excluded,
        sample_length=study.sample_length,
        batches_per_task=study.batches_per_task,
        gd=study.matrices.gd.tolist(),
        gm=study.matrices.gm.tolist(),
        indexes=study.indexes.tolist(),
        normalized_indexes=study.normalized_indexes.tolist(),
        normalized_mean=study.normalized_mean,
        normalized_std=study.normalized_std,
        histogram=HistogramReport(
            edges=hist.edges,
            counts=hist.counts,
            proportions=hist.proportions,
            high_mass=hist.mass_between(0.8, 1.0),
        ),
    )


def _routing_report(stage: str, table: RoutingTable) -> RoutingReport:
    return RoutingReport(
        stage=stage,
        task_ids=table.task_ids,
        weights=table.weights.tolist(),
        token_counts=table.token_counts,
    )


def _metric_rows(table: MetricTable) -> List[TaskMetricRow]:
    return [
        TaskMetricRow(
            task_id=r.task_id,
            tag=r.tag.value,
            head_kind=r.head_kind.value,
            primary=r.primary,
            values=r.values,
        )
        for r in table.rows
    ]


def _routing_stages(
    model: ToyMultiTaskModel, suite: TaskSuite, cfg: ExperimentConfig, result: TrainResult
) -> List[RoutingReport]:
    batches = cfg.diagnostics.routing_batches_per_task
    final = collect_routing(model, suite, cfg.seed, batches, cfg.train.batch_size)
    if final is None:
        return []
    reports = []
    if result.warmup_state is not None:
        final_state = state_dict(model)
        load_state_dict(model, result.warmup_state)
        warm = collect_routing(model, suite, cfg.seed, batches, cfg.train.batch_size)
        load_state_dict(model, final_state)
        assert warm is not None
        reports.append(_routing_report("warmup", warm))
    reports.append(_routing_report("final", final))
    return reports


def _delta(metrics: List[TaskMetricRow], baseline: RunReport) -> DeltaReport:
    """
    Δ against ``baseline``; a task whose baseline score is zero has no Δ.

    Such tasks are listed in ``undefined`` and left out of the total, so one
    degenerate baseline replicate does not void the rest of a grid.
    """
    base = {m.task_id: m for m in baseline.metrics}
    if [m.task_id for m in metrics] != [m.task_id for m in baseline.metrics]:
        raise ContractError("baseline report covers different tasks", rule_name="same_tasks")
    per_task: Dict[str, Optional[float]] = {}
    scores: List[float] = []
    base_scores: List[float] = []
    undefined: List[str] = []
    for m in metrics:
        s, b = m.values[m.primary], base[m.task_id].values[m.primary]
        if b == 0.0:
            per_task[m.task_id] = None
            undefined.append(m.task_id)
            continue
        per_task[m.task_id] = delta_metric([s], [b])
        scores.append(s)
        base_scores.append(b)
    if undefined:
        logger.warning(
            "baseline score is zero; Δ undefined",
            extra={"run_id": baseline.name, "tasks": undefined},
        )
    return DeltaReport(
        baseline=baseline.name,
        total=delta_metric(scores, base_scores) if scores else None,
        per_task=per_task,
        undefined=undefined,
    )


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: Path,
    baseline: Optional[RunReport] = None,
) -> RunReport:
    """Train, evaluate, study interference, and write every run file under ``out_dir``."""
    started = time.perf_counter()
    logger.info("run started", extra={"run_id": cfg.name, "seed": cfg.seed,
                                      "path": str(out_dir)})
    suite, model = build(cfg)
    result = train(model, suite, cfg.train_config(), run_id=cfg.name)

    routing = _routing_stages(model, suite, cfg, result)
    table = evaluate(model, suite, cfg.seed, cfg.diagnostics.eval_batches_per_task,
                     cfg.train.batch_size)
    metrics = _metric_rows(table)

    diagnostics = None
    if cfg.diagnostics.enabled:
        snap = cfg.diagnostics.snapshot_iter
        if snap is not None and result.snapshot_state is not None:
            final_state = state_dict(model)
            load_state_dict(model, result.snapshot_state)
            diagnostics = run_diagnostics(model, suite, cfg.diagnostics, cfg.seed,
                                          cfg.train.batch_size, f"iter-{snap}")
            load_state_dict(model, final_state)
        else:
            diagnostics = run_diagnostics(model, suite, cfg.diagnostics, cfg.seed,
                                          cfg.train.batch_size, "final")

    log = result.log
    report = RunReport(
        name=cfg.name,
        seed=cfg.seed,
        versions=versions(),
        config=cfg,
        training=TrainingSummary(
            iterations=len(log),
            initial_loss=log[0].loss if log else None,
            final_loss=log[-1].loss if log else None,
        ),
        metrics=metrics,
        delta=_delta(metrics, baseline) if baseline is not None else None,
        diagnostics=diagnostics,
        routing=routing,
    )

    save_checkpoint(out_dir / "checkpoint.json", state_dict(model))
    if result.warmup_state is not None:
        save_checkpoint(out_dir / "checkpoint_warmup.json", result.warmup_state)
    if result.snapshot_state is not None:
        save_checkpoint(out_dir / "checkpoint_snapshot.json", result.snapshot_state)
    write_run_report(out_dir, report, log)

    log_run_summary(cfg.name, "run", (time.perf_counter() - started) * 1000.0,
                    iterations=len(log))
    return report


def run_diagnose(
    cfg: ExperimentConfig, checkpoint: Path, out_dir: Optional[Path] = None
) -> DiagnosticsReport:
    """Diagnostics of a saved parameter state; no training."""
    started = time.perf_counter()
    suite, model = build(cfg)
    load_state_dict(model, load_checkpoint(checkpoint))
    report = run_diagnostics(model, suite, cfg.diagnostics, cfg.seed,
                             cfg.train.batch_size, "checkpoint")
    if out_dir is not None:
        write_json(out_dir / "diagnostics.json", report)
        write_diagnostics_tables(out_dir, report)
    log_run_summary(cfg.name, "diagnose", (time.perf_counter() - started) * 1000.0)
    return report


# === GRID ===


def _run_cell(payload: Tuple[str, str, str]) -> str:
    """Worker entry point: config JSON in, report JSON out."""
    cfg_json, out_dir, cell = payload
    cfg = ExperimentConfig.model_validate_json(cfg_json)
    with log_cell(cell):
        return run_experiment(cfg, Path(out_dir)).model_dump_json()


def _init_worker(level: Optional[str]) -> None:
    setup_logging(level)


def _mean_std(values: List[float]) -> MeanStd:
    return MeanStd(mean=float(np.mean(values)), std=float(np.std(values)))


def run_grid(
    grid: GridConfig, out_dir: Path, jobs: int = 1, log_level: Optional[str] = None
) -> GridSummary:
    """One run per (variant, replicate), then the Δ summary against the baseline variant."""
    if grid.baseline not in grid.variant_names():
        raise ContractError(
            f"baseline variant {grid.baseline!r} is not in the grid", rule_name="baseline_cell"
        )
    started = time.perf_counter()
    seeds = [derive_seed(grid.seed, "replicate", r) for r in range(grid.replicates)]
    cells: List[Tuple[str, int, ExperimentConfig, Path]] = [
        (v.name, r, grid.cell_config(v, r, seeds[r]), out_dir / v.name / f"r{r}")
        for v in grid.variants
        for r in range(grid.replicates)
    ]
    payloads = [
        (cfg.model_dump_json(), str(path), f"{name}/r{r}") for name, r, cfg, path in cells
    ]
    logger.info("grid started", extra={"run_id": grid.name, "cells": len(cells), "jobs": jobs})

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(log_level,)) as pool:
            outputs = list(pool.map(_run_cell, payloads))
    else:
        outputs = [_run_cell(p) for p in payloads]

    reports: Dict[Tuple[str, int], RunReport] = {
        (name, r): RunReport.model_validate_json(out)
        for (name, r, _, _), out in zip(cells, outputs)
    }
    summary = summarize_grid(grid, reports)
    write_grid_summary(out_dir, summary)
    log_run_summary(grid.name, "grid", (time.perf_counter() - started) * 1000.0,
                    cells=len(cells))
    return summary


def summarize_grid(grid: GridConfig, reports: Dict[Tuple[str, int], RunReport]) -> GridSummary:
    """
    Per variant: mean ± std of primary metrics and of Δ vs the paired baseline replicate.

    Replicates whose baseline score is zero are left out of that task's Δ and
    listed as ``<task>/r<replicate>`` in ``undefined_deltas``.
    """
    first = reports[(grid.baseline, 0)]
    task_ids = [m.task_id for m in first.metrics]
    cells = []
    for variant in grid.variant_names():
        scores: Dict[str, List[float]] = {t: [] for t in task_ids}
        totals: List[float] = []
        per_task: Dict[str, List[float]] = {t: [] for t in task_ids}
        undefined: List[str] = []
        high_mass: List[float] = []
        index_std: List[float] = []
        for r in range(grid.replicates):
            report = reports[(variant, r)]
            base = reports[(grid.baseline, r)]
            delta = _delta(report.metrics, base)
            if delta.total is not None:
                totals.append(delta.total)
            undefined += [f"{t}/r{r}" for t in delta.undefined]
            for m in report.metrics:
                scores[m.task_id].append(m.values[m.primary])
                task_delta = delta.per_task[m.task_id]
                if task_delta is not None:
                    per_task[m.task_id].append(task_delta)
            if report.diagnostics is not None:
                high_mass.append(report.diagnostics.histogram.high_mass)
                index_std.append(report.diagnostics.normalized_std)
        cells.append(
            GridCellSummary(
                variant=variant,
                replicates=grid.replicates,
                metrics={t: _mean_std(v) for t, v in scores.items()},
                total_delta=_mean_std(totals) if totals else None,
                per_task_delta={t: _mean_std(v) if v else None for t, v in per_task.items()},
                undefined_deltas=undefined,
                high_mass=_mean_std(high_mass) if high_mass else None,
                normalized_index_std=_mean_std(index_std) if index_std else None,
            )
        )
    return GridSummary(name=grid.name, seed=grid.seed, baseline=grid.baseline,
                       task_ids=task_ids, cells=cells)
