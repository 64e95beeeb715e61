#!/usr/bin/env python3
"""
cmoe-lab command-line runner.

Sub-commands:
    run <config>               train, evaluate and study one configuration
    grid <config>              run every (variant, replicate) cell of an ablation grid
    diagnose <ckpt> <config>   interference study of a saved checkpoint, no training
    schema                     write the JSON schemas of config and report documents

Exit codes: 0 success, 2 invalid config, 3 numeric abort, 4 I/O error.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Type, TypeVar

from pydantic import BaseModel

from app.config import config
from app.exceptions import EXIT_OK, LabException, handle_exception
from app.experiment import run_diagnose, run_experiment, run_grid
from app.harness import WatchedScope
from app.logging_config import get_logger, log_error, setup_logging
from app.models import ExperimentConfig, GridConfig, RunReport
from app.reporting import write_schemas

logger = get_logger("cli")

ConfigT = TypeVar("ConfigT", bound=BaseModel)


def read_document(path: Path, model: Type[ConfigT], overrides: Dict[str, Any]) -> ConfigT:
    """
    Parse and validate a JSON document.

    ``overrides`` maps dotted keys to values applied before validation, so
    command-line flags go through the same checks as the file.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        for dotted, value in overrides.items():
            if value is None:
                continue
            node = data
            *parents, leaf = dotted.split(".")
            for key in parents:
                node = node.setdefault(key, {})
            node[leaf] = value
        return model.model_validate(data)
    except Exception as e:
        raise handle_exception("read_config", e, {"path": str(path)}) from e


def _diagnostic_overrides(args: argparse.Namespace, prefix: str = "") -> Dict[str, Any]:
    return {
        f"{prefix}diagnostics.snapshot_iter": getattr(args, "snapshot_iter", None),
        f"{prefix}diagnostics.batches_per_task": args.batches_per_task,
        f"{prefix}diagnostics.watched": getattr(args, "watched", None),
    }


def cmd_run(args: argparse.Namespace) -> int:
    cfg = read_document(
        args.config, ExperimentConfig, {"seed": args.seed, **_diagnostic_overrides(args)}
    )
    baseline = None
    if args.baseline:
        baseline = read_document(Path(args.baseline), RunReport, {})
    out_dir = config.resolve_output_dir(args.out or cfg.output_dir) / cfg.name
    report = run_experiment(cfg, out_dir, baseline=baseline)
    print(f"run {report.name}: reports in {out_dir}")
    return EXIT_OK


def cmd_grid(args: argparse.Namespace) -> int:
    grid = read_document(
        args.config, GridConfig, {"seed": args.seed, **_diagnostic_overrides(args, "base.")}
    )
    out_dir = config.resolve_output_dir(args.out or grid.base.output_dir) / grid.name
    jobs = args.jobs or config.runtime.default_jobs
    summary = run_grid(grid, out_dir, jobs=jobs, log_level=args.log_level)
    for cell in summary.cells:
        total = cell.total_delta
        shown = f"{total.mean:+.2f}% ± {total.std:.2f}" if total else "undefined"
        print(f"{cell.variant:<24} Δ {shown}")
        if cell.undefined_deltas:
            print(f"{'':<24} no Δ for {', '.join(cell.undefined_deltas)}")
    print(f"grid {summary.name}: summary in {out_dir}")
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    cfg = read_document(
        args.config, ExperimentConfig, {"seed": args.seed, **_diagnostic_overrides(args)}
    )
    out_dir = config.resolve_output_dir(args.out or cfg.output_dir) / cfg.name / "diagnose"
    report = run_diagnose(cfg, args.checkpoint, out_dir)
    print(f"diagnose {cfg.name}: {len(report.task_ids)} tasks, "
          f"sample length {report.sample_length}, tables in {out_dir}")
    return EXIT_OK


def cmd_schema(args: argparse.Namespace) -> int:
    out_dir = config.resolve_output_dir(args.out) / "schema"
    for path in write_schemas(out_dir):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmoe-lab",
        description="Connector-MoE and multi-task interference laboratory",
    )
    parser.add_argument("--log-level", default=None, help="Override CMOE_LAB_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=None, help="Override the config seed")
        p.add_argument("--out", default=None, help="Output directory (CMOE_LAB_OUT wins)")
        p.add_argument("--batches-per-task", type=int, default=None,
                       help="Gradient batches per task for the interference study")

    run = sub.add_parser("run", help="Train, evaluate and study one configuration")
    run.add_argument("config", type=Path)
    common(run)
    run.add_argument("--snapshot-iter", type=int, default=None,
                     help="Study the parameters at this iteration")
    run.add_argument("--watched", choices=[s.value for s in WatchedScope], default=None)
    run.add_argument("--baseline", default=None, help="report.json to compute Δ against")
    run.set_defaults(handler=cmd_run)

    grid = sub.add_parser("grid", help="Run an ablation grid")
    grid.add_argument("config", type=Path)
    common(grid)
    grid.add_argument("--snapshot-iter", type=int, default=None)
    grid.add_argument("--jobs", type=int, default=None, help="Concurrent grid cells")
    grid.set_defaults(handler=cmd_grid)

    diagnose = sub.add_parser("diagnose", help="Interference study of a checkpoint")
    diagnose.add_argument("checkpoint", type=Path)
    diagnose.add_argument("config", type=Path)
    common(diagnose)
    diagnose.add_argument("--watched", choices=[s.value for s in WatchedScope], default=None)
    diagnose.set_defaults(handler=cmd_diagnose)

    schema = sub.add_parser("schema", help="Write JSON schemas")
    schema.add_argument("--out", default=None)
    schema.set_defaults(handler=cmd_schema)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    logger.info(f"cmoe-lab {config.app_version} {args.command}",
                extra={"command": args.command, "settings": config.export_config_summary()})
    try:
        return int(args.handler(args))
    except Exception as e:
        error: LabException = handle_exception(args.command, e)
        log_error(error, {"command": args.command})
        print(f"error: {error.message}", file=sys.stderr)
        for problem in getattr(error, "problems", []):
            print(f"  {problem}", file=sys.stderr)
        return error.exit_code


if __name__ == "__main__":
    sys.exit(main())
