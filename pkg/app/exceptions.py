"""
Exception hierarchy for cmoe-lab.

Every failure the lab can report is a ``LabException`` carrying an error code,
a category, a severity, structured context and the process exit code the CLI
should use when the error escapes a command.
"""

from __future__ import annotations

import json
from datetime import datetime, timezone
from enum import Enum
from typing import Any

import pydantic


class ErrorSeverity(Enum):
    """Error severity levels for categorization."""

    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


class ErrorCategory(Enum):
    """Error categories for better classification."""

    DIMENSION = "dimension"
    CONTRACT = "contract"
    NUMERIC = "numeric"
    CONFIGURATION = "configuration"
    IO = "io"
    INTERNAL = "internal"


# Process exit codes used by the CLI
EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class LabException(Exception):
    """
    Base exception class for cmoe-lab with structured error information.

    Subclasses fix the error code, category and exit code; callers add
    context (shapes, task ids, iterations) that ends up in logs and in the
    CLI diagnostics.
    """

    exit_code: int = EXIT_INTERNAL

    def __init__(
        self,
        message: str,
        error_code: str,
        category: ErrorCategory = ErrorCategory.INTERNAL,
        severity: ErrorSeverity = ErrorSeverity.MEDIUM,
        context: dict[str, Any] | None = None,
    ) -> None:
        super().__init__(message)

        self.message = message
        self.error_code = error_code
        self.category = category
        self.severity = severity
        self.context = context or {}
        self.timestamp = datetime.now(timezone.utc)

    def to_dict(self) -> dict[str, Any]:
        """Convert exception to dictionary for serialization."""
        return {
            "error_code": self.error_code,
            "message": self.message,
            "category": self.category.value,
            "severity": self.severity.value,
            "context": self.context,
            "exit_code": self.exit_code,
            "timestamp": self.timestamp.isoformat(),
        }


# === SHAPE AND CONTRACT EXCEPTIONS ===


class DimensionError(LabException):
    """Raised when operand shapes do not fit together."""

    def __init__(
        self,
        message: str,
        *shapes: tuple[int, ...],
        context: dict[str, Any] | None = None,
    ) -> None:
        details = {"shapes": [list(s) for s in shapes]}
        details.update(context or {})
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)

        super().__init__(
            message=message,
            error_code="DIMENSION_ERROR",
            category=ErrorCategory.DIMENSION,
            severity=ErrorSeverity.LOW,
            context=details,
        )


class ContractError(LabException):
    """Raised when a precondition of an operation is violated."""

    def __init__(
        self, message: str, rule_name: str, context: dict[str, Any] | None = None
    ) -> None:
        details: dict[str, Any] = {"rule_name": rule_name}
        details.update(context or {})

        super().__init__(
            message=message,
            error_code="CONTRACT_VIOLATION",
            category=ErrorCategory.CONTRACT,
            severity=ErrorSeverity.LOW,
            context=details,
        )


class NumericError(LabException):
    """Raised on non-finite values or degenerate norms."""

    exit_code = EXIT_NUMERIC

    def __init__(self, message: str, context: dict[str, Any] | None = None) -> None:
        super().__init__(
            message=message,
            error_code="NUMERIC_ERROR",
            category=ErrorCategory.NUMERIC,
            severity=ErrorSeverity.MEDIUM,
            context=context,
        )


class TrainingAbortedError(NumericError):
    """Raised when a training loss becomes non-finite."""

    def __init__(self, iteration: int, task_id: str, loss: float) -> None:
        super().__init__(
            message=f"Non-finite loss {loss!r} at iteration {iteration} (task {task_id})",
            context={"iteration": iteration, "task_id": task_id, "loss": repr(loss)},
        )
        self.iteration = iteration


# === CONFIGURATION AND I/O EXCEPTIONS ===


class ConfigurationError(LabException):
    """Raised when an experiment configuration is invalid."""

    exit_code = EXIT_CONFIG

    def __init__(
        self,
        message: str,
        source: str,
        problems: list[str] | None = None,
    ) -> None:
        super().__init__(
            message=message,
            error_code="CONFIGURATION_ERROR",
            category=ErrorCategory.CONFIGURATION,
            severity=ErrorSeverity.HIGH,
            context={"source": source, "problems": problems or []},
        )
        self.problems = problems or []


class ReportIOError(LabException):
    """Raised when reading or writing run artifacts fails."""

    exit_code = EXIT_IO

    def __init__(self, message: str, path: str) -> None:
        super().__init__(
            message=message,
            error_code="REPORT_IO_ERROR",
            category=ErrorCategory.IO,
            severity=ErrorSeverity.HIGH,
            context={"path": path},
        )


# === EXCEPTION HANDLING UTILITIES ===


def describe_validation_error(error: pydantic.ValidationError) -> list[str]:
    """Render each pydantic error as ``field.path: message``."""
    problems = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        problems.append(f"{location}: {item['msg']}")
    return problems


def handle_exception(
    operation: str,
    exception: Exception,
    context: dict[str, Any] | None = None,
) -> LabException:
    """
    Convert any exception to a structured LabException.

    Args:
        operation: Name of the operation where the exception occurred
        exception: The original exception
        context: Additional context information

    Returns:
        Structured LabException
    """
    if isinstance(exception, LabException):
        return exception

    source = str((context or {}).get("path", operation))

    if isinstance(exception, json.JSONDecodeError):
        return ConfigurationError(
            message=f"Invalid JSON in {source}",
            source=source,
            problems=[
                f"line {exception.lineno}, column {exception.colno}: {exception.msg}"
            ],
        )

    if isinstance(exception, pydantic.ValidationError):
        return ConfigurationError(
            message=f"Invalid configuration in {source}",
            source=source,
            problems=describe_validation_error(exception),
        )

    if isinstance(exception, OSError):
        return ReportIOError(message=str(exception), path=source)

    if isinstance(exception, (ValueError, FloatingPointError)):
        return NumericError(
            message=str(exception),
            context={
                "original_exception": type(exception).__name__,
                "operation": operation,
                **(context or {}),
            },
        )

    return LabException(
        message=str(exception),
        error_code="INTERNAL_ERROR",
        context={
            "original_exception": type(exception).__name__,
            "operation": operation,
            **(context or {}),
        },
    )
