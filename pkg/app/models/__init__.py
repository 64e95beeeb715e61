"""
Document models for cmoe-lab

Experiment and grid configurations going in, run reports and grid
summaries coming out.
"""

from .experiment import (
    CmoeSettings,
    ConnectorConfig,
    DiagnosticsSettings,
    ExperimentConfig,
    GeometrySettings,
    GridConfig,
    GridVariant,
    LoraSettings,
    ModelSettings,
    ResamplerSettings,
    SuiteConfig,
    TaskConfig,
    TrainSettings,
)
from .report import (
    DeltaReport,
    DiagnosticsReport,
    GridCellSummary,
    GridSummary,
    HistogramReport,
    MeanStd,
    RoutingReport,
    RunReport,
    TaskMetricRow,
    TrainingSummary,
)

__all__ = [
    # Configuration documents
    "CmoeSettings",
    "ConnectorConfig",
    "DiagnosticsSettings",
    "ExperimentConfig",
    "GeometrySettings",
    "GridConfig",
    "GridVariant",
    "LoraSettings",
    "ModelSettings",
    "ResamplerSettings",
    "SuiteConfig",
    "TaskConfig",
    "TrainSettings",
    # Report documents
    "DeltaReport",
    "DiagnosticsReport",
    "GridCellSummary",
    "GridSummary",
    "HistogramReport",
    "MeanStd",
    "RoutingReport",
    "RunReport",
    "TaskMetricRow",
    "TrainingSummary",
]
