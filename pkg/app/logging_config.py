"""
Structured logging configuration for cmoe-lab.

Console output is human-readable in development and JSON lines elsewhere;
an optional rotating file handler always writes JSON lines.
"""

from __future__ import annotations

import json
import logging
import logging.config
import sys
from contextlib import contextmanager
from contextvars import ContextVar
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator

import psutil

from .config import config

_EXCLUDED_FIELDS = {
    "name",
    "msg",
    "args",
    "levelname",
    "levelno",
    "pathname",
    "filename",
    "module",
    "lineno",
    "funcName",
    "created",
    "msecs",
    "relativeCreated",
    "thread",
    "threadName",
    "processName",
    "process",
    "message",
    "exc_info",
    "exc_text",
    "stack_info",
    "taskName",
}

# grid cell ("<variant>/r<replicate>") of the run being executed
_current_cell: ContextVar[str] = ContextVar("cell", default="-")


@contextmanager
def log_cell(cell: str) -> Iterator[None]:
    """Stamp ``cell`` on every record logged inside the block."""
    token = _current_cell.set(cell)
    try:
        yield
    finally:
        _current_cell.reset(token)


class StructuredFormatter(logging.Formatter):
    """
    JSON formatter for structured logging.
    Provides consistent, machine-readable log format.
    """

    def format(self, record: logging.LogRecord) -> str:
        """Format log record as structured JSON."""
        log_entry: dict[str, Any] = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno,
        }

        if record.process:
            log_entry["process_id"] = record.process

        if record.exc_info:
            log_entry["exception"] = self.formatException(record.exc_info)

        for key, value in record.__dict__.items():
            if key not in _EXCLUDED_FIELDS:
                log_entry[key] = value

        return json.dumps(log_entry, ensure_ascii=False, default=str)


class RunContextFilter(logging.Filter):
    """
    Filter to add run context to log records.
    Lets concurrent grid cells be told apart in a shared log stream.
    """

    def filter(self, record: logging.LogRecord) -> bool:
        """Add run context to log record."""
        if not hasattr(record, "run_id"):
            record.run_id = "no_run"
        if not hasattr(record, "cell"):
            record.cell = _current_cell.get()
        return True


def setup_logging(level: str | None = None) -> None:
    """
    Configure structured logging for the application.

    Sets up different handlers for different environments:
    - Development: Console with readable format
    - Otherwise: Structured JSON for log aggregation
    """
    log_level = getattr(logging, (level or config.log_level).upper(), logging.INFO)

    handlers: dict[str, Any] = {
        "console": {
            "class": "logging.StreamHandler",
            "level": log_level,
            "formatter": "structured" if config.logging.json_console else "simple",
            "stream": sys.stderr,
            "filters": ["run_context"],
        }
    }
    active = ["console"]

    if config.logging.log_dir:
        log_dir = Path(config.logging.log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        handlers["file_structured"] = {
            "class": "logging.handlers.RotatingFileHandler",
            "level": log_level,
            "formatter": "structured",
            "filename": str(log_dir / "cmoe-lab.log"),
            "maxBytes": 10485760,  # 10MB
            "backupCount": 5,
            "filters": ["run_context"],
        }
        active.append("file_structured")

    logging_config: dict[str, Any] = {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "structured": {"()": StructuredFormatter},
            "simple": {
                "format": "%(asctime)s [%(levelname)s] %(name)s [%(run_id)s %(cell)s]: %(message)s",
                "datefmt": "%Y-%m-%d %H:%M:%S",
            },
        },
        "filters": {"run_context": {"()": RunContextFilter}},
        "handlers": handlers,
        "loggers": {
            "app": {"level": log_level, "handlers": active, "propagate": False},
        },
        "root": {"level": logging.WARNING, "handlers": ["console"]},
    }

    logging.config.dictConfig(logging_config)

    get_logger("setup").debug(
        "Structured logging initialized",
        extra={
            "environment": config.environment,
            "log_level": config.log_level,
            "structured_logging": config.logging.json_console,
        },
    )


def get_logger(name: str) -> logging.Logger:
    """
    Get a configured logger for a module.

    Args:
        name: Logger name, typically the module's short name

    Returns:
        Configured logger instance
    """
    return logging.getLogger(f"app.{name}")


def log_training_progress(
    run_id: str,
    iteration: int,
    task_id: str,
    loss: float,
    lr: float,
) -> None:
    """Log one sampled training iteration."""
    logger = get_logger("training")
    logger.info(
        f"iter {iteration} task {task_id} loss {loss:.6f} lr {lr:.3e}",
        extra={
            "run_id": run_id,
            "iteration": iteration,
            "task_id": task_id,
            "loss": loss,
            "lr": lr,
            "metric_type": "training",
        },
    )


def log_run_summary(
    run_id: str,
    operation: str,
    duration_ms: float,
    success: bool = True,
    **kwargs: Any,
) -> None:
    """
    Log the outcome of a run-level operation with its resource footprint.

    Args:
        run_id: Run identifier
        operation: Operation being performed
        duration_ms: Duration in milliseconds
        success: Whether the operation was successful
        **kwargs: Additional context
    """
    rss_mb = psutil.Process().memory_info().rss / (1024 * 1024)
    logger = get_logger("performance")
    logger.info(
        f"{operation} {'completed' if success else 'failed'} in {duration_ms:.0f} ms",
        extra={
            "run_id": run_id,
            "operation": operation,
            "duration_ms": duration_ms,
            "success": success,
            "rss_mb": round(rss_mb, 1),
            "metric_type": "performance",
            **kwargs,
        },
    )


def log_error(
    error: Exception,
    context: dict[str, Any] | None = None,
) -> None:
    """
    Log error with structured context.

    Lab exceptions contribute their ``to_dict()`` under ``error``.

    Args:
        error: Exception that occurred
        context: Additional error context
    """
    logger = get_logger("errors")
    to_dict = getattr(error, "to_dict", None)
    logger.error(
        f"Error occurred: {error!s}",
        extra={
            "error_type": type(error).__name__,
            "error_message": str(error),
            "error": to_dict() if callable(to_dict) else None,
            "context": context or {},
            "metric_type": "error",
        },
        exc_info=error if error.__traceback__ is not None else None,
    )
