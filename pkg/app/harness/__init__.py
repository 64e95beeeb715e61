"""Synthetic multi-task suite, toy model, trainer and evaluation."""

from .evaluation import (
    MetricTable,
    TaskMetrics,
    collect_routing,
    delta_metric,
    evaluate,
    oracle_prediction,
    per_task_delta,
)
from .model import ModelConfig, Prediction, ToyMultiTaskModel, WatchedScope, watched_parameters
from .tasks import (
    HeadKind,
    SuiteGeometry,
    SyntheticBatch,
    TaskSpec,
    TaskSuite,
    TaskTag,
    make_task_suite,
    proportional_sampler,
)
from .trainer import TrainConfig, TrainLogEntry, TrainResult, train

__all__ = [
    "HeadKind",
    "MetricTable",
    "ModelConfig",
    "Prediction",
    "SuiteGeometry",
    "SyntheticBatch",
    "TaskMetrics",
    "TaskSpec",
    "TaskSuite",
    "TaskTag",
    "ToyMultiTaskModel",
    "TrainConfig",
    "TrainLogEntry",
    "TrainResult",
    "WatchedScope",
    "collect_routing",
    "delta_metric",
    "evaluate",
    "make_task_suite",
    "oracle_prediction",
    "per_task_delta",
    "proportional_sampler",
    "train",
    "watched_parameters",
]
