"""
Report documents written by the experiment runner.

Every matrix and table carries its task-id labels so a report can be read
without the config that produced it.
"""

from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from .experiment import ExperimentConfig


class ReportModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, protected_namespaces=())


class TaskMetricRow(ReportModel):
    task_id: str
    tag: str
    head_kind: str
    primary: str = Field(description="Metric used for Δ")
    values: Dict[str, float]


class DeltaReport(ReportModel):
    baseline: str = Field(description="Name of the baseline run or variant")
    total: Optional[float] = Field(
        description="Δ over the tasks with a defined Δ, percent; null when there is none"
    )
    per_task: Dict[str, Optional[float]] = Field(description="null where Δ is undefined")
    undefined: List[str] = Field(
        default_factory=list, description="Tasks whose baseline score is zero"
    )


class HistogramReport(ReportModel):
    edges: List[float]
    counts: List[int]
    proportions: List[float]
    high_mass: float = Field(description="Proportion of scores in [0.8, 1.0]")


class DiagnosticsReport(ReportModel):
    stage: str = Field(description="'final' or 'iter-<n>'")
    watched: str
    task_ids: List[str]
    excluded_tasks: List[str] = Field(
        default_factory=list, description="Tasks whose watched gradient is identically zero"
    )
    sample_length: int
    batches_per_task: int
    gd: List[List[float]]
    gm: List[List[float]]
    indexes: List[float]
    normalized_indexes: List[float]
    normalized_mean: float
    normalized_std: float
    histogram: HistogramReport


class RoutingReport(ReportModel):
    stage: str = Field(description="'warmup' or 'final'")
    task_ids: List[str]
    weights: List[List[float]]
    token_counts: List[int]


class TrainingSummary(ReportModel):
    iterations: int
    initial_loss: Optional[float] = None
    final_loss: Optional[float] = None


class RunReport(ReportModel):
    name: str
    seed: int
    versions: Dict[str, str]
    config: ExperimentConfig
    training: TrainingSummary
    metrics: List[TaskMetricRow]
    delta: Optional[DeltaReport] = None
    diagnostics: Optional[DiagnosticsReport] = None
    routing: List[RoutingReport] = Field(default_factory=list)


class MeanStd(ReportModel):
    mean: float
    std: float


class GridCellSummary(ReportModel):
    variant: str
    replicates: int
    metrics: Dict[str, MeanStd] = Field(description="Primary metric per task")
    total_delta: Optional[MeanStd] = Field(description="null when no replicate has a defined Δ")
    per_task_delta: Dict[str, Optional[MeanStd]]
    undefined_deltas: List[str] = Field(
        default_factory=list, description="<task>/r<replicate> entries skipped for a zero baseline"
    )
    high_mass: Optional[MeanStd] = None
    normalized_index_std: Optional[MeanStd] = None


class GridSummary(ReportModel):
    name: str
    seed: int
    baseline: str
    task_ids: List[str]
    cells: List[GridCellSummary]
