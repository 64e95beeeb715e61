"""
Experiment configuration documents.

JSON experiment and grid configs are validated by these pydantic models
before any compute starts. Unknown keys are rejected everywhere.
"""

from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..connector import (
    AggregationMethod,
    CmoeConfig,
    ConnectorKind,
    ResamplerConfig,
    RoutingStrategy,
)
from ..harness.model import ModelConfig, WatchedScope
from ..harness.tasks import HeadKind, SuiteGeometry, TaskSpec, TaskTag
from ..harness.trainer import TrainConfig
from ..numerics.optim import DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS, DEFAULT_WEIGHT_DECAY
from ..routers import RouterKind


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, protected_namespaces=())


class GeometrySettings(StrictModel):
    """Shapes shared by every synthetic task."""

    n_visual_tokens: int = Field(default=8, ge=1, description="Visual tokens per sample")
    d_visual: int = Field(default=16, ge=1, description="Width of one visual token")
    latent_dim: int = Field(default=8, ge=2, description="Latent factors behind every sample")
    n_classes: int = Field(default=2, ge=2, description="Classes of classification tasks")
    seq_len: int = Field(default=4, ge=1, description="Tokens per token-match answer")
    vocab_size: int = Field(default=8, ge=2, description="Vocabulary of token-match tasks")


class TaskConfig(StrictModel):
    id: str = Field(min_length=1, description="Unique task identifier")
    tag: TaskTag = Field(description="Text-level task identifier")
    head: HeadKind = Field(description="Output head kind")
    volume: int = Field(default=1, ge=1, description="Relative data volume")
    conflict_angle: float = Field(default=0.0, description="Target rotation in radians")
    noise: float = Field(default=0.05, ge=0.0, description="Feature noise scale")
    visual: bool = Field(default=True, description="False for text-only tasks")


class SuiteConfig(StrictModel):
    tasks: List[TaskConfig] = Field(min_length=1)
    geometry: GeometrySettings = Field(default_factory=GeometrySettings)

    @model_validator(mode="after")
    def unique_task_ids(self) -> "SuiteConfig":
        ids = [t.id for t in self.tasks]
        duplicates = sorted({i for i in ids if ids.count(i) > 1})
        if duplicates:
            raise ValueError(f"duplicate task ids: {', '.join(duplicates)}")
        if not any(t.visual for t in self.tasks):
            raise ValueError("at least one task must have visual input")
        return self


class ResamplerSettings(StrictModel):
    alpha: int = Field(default=1, ge=1, description="Compression rate")
    method: AggregationMethod = Field(default=AggregationMethod.PROJECTION)

    @model_validator(mode="after")
    def none_needs_alpha_one(self) -> "ResamplerSettings":
        if self.method == AggregationMethod.NONE and self.alpha != 1:
            raise ValueError("aggregation 'none' requires alpha = 1")
        return self


class CmoeSettings(StrictModel):
    n_experts: int = Field(default=5, ge=1)
    router: RouterKind = Field(default=RouterKind.SOFT_SOFTMAX)
    strategy: RoutingStrategy = Field(default=RoutingStrategy.TOKEN_AND_TASK)
    top_k: int = Field(default=2, ge=1)
    expert_hidden: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def top_k_within_experts(self) -> "CmoeSettings":
        if self.router == RouterKind.SPARSE and self.top_k > self.n_experts:
            raise ValueError(f"top_k {self.top_k} exceeds n_experts {self.n_experts}")
        return self


class ConnectorConfig(StrictModel):
    kind: ConnectorKind = Field(default=ConnectorKind.CMOE)
    d_out: int = Field(default=32, ge=1, description="Language embedding width")
    mlp_hidden: Optional[int] = Field(default=None, ge=1)
    use_task_tokens: bool = Field(default=True, description="Vision-level task tokens")
    resampler: ResamplerSettings = Field(default_factory=ResamplerSettings)
    cmoe: CmoeSettings = Field(default_factory=CmoeSettings)

    @model_validator(mode="after")
    def task_tokens_for_strategy(self) -> "ConnectorConfig":
        if (self.kind == ConnectorKind.CMOE and self.cmoe.router.needs_network
                and self.cmoe.strategy.needs_task_tokens and not self.use_task_tokens):
            raise ValueError(
                f"strategy {self.cmoe.strategy.value} needs use_task_tokens = true"
            )
        return self


class LoraSettings(StrictModel):
    mode: Literal["none", "lora", "lora-moe"] = "none"
    rank: int = Field(default=8, ge=1)
    alpha: float = Field(default=16.0, gt=0.0)
    n_experts: int = Field(default=5, ge=1)
    top_k: int = Field(default=2, ge=1)


class ModelSettings(StrictModel):
    use_task_identifiers: bool = Field(default=True, description="Text-level task tags")
    trunk_width: int = Field(default=128, ge=2)
    trunk_blocks: int = Field(default=2, ge=1)
    lora: LoraSettings = Field(default_factory=LoraSettings)

    @model_validator(mode="after")
    def rank_fits_trunk(self) -> "ModelSettings":
        if self.lora.mode != "none" and 2 * self.lora.rank > self.trunk_width:
            raise ValueError(
                f"lora rank {self.lora.rank} exceeds half the trunk width {self.trunk_width}"
            )
        return self


class TrainSettings(StrictModel):
    total_iters: int = Field(default=5000, ge=0)
    warmup_iters: int = Field(default=500, ge=0)
    batch_size: int = Field(default=4, ge=1)
    peak_lr: float = Field(default=1e-3, ge=0.0)
    min_lr: float = Field(default=1e-5, ge=0.0)
    beta1: float = Field(default=DEFAULT_BETA1, ge=0.0, lt=1.0)
    beta2: float = Field(default=DEFAULT_BETA2, ge=0.0, lt=1.0)
    eps: float = Field(default=DEFAULT_EPS, gt=0.0)
    weight_decay: float = Field(default=DEFAULT_WEIGHT_DECAY, ge=0.0)

    @model_validator(mode="after")
    def warmup_within_run(self) -> "TrainSettings":
        if self.warmup_iters > self.total_iters:
            raise ValueError("warmup_iters exceeds total_iters")
        return self


class DiagnosticsSettings(StrictModel):
    enabled: bool = True
    batches_per_task: int = Field(default=100, ge=2)
    watched: WatchedScope = Field(default=WatchedScope.CONNECTOR)
    snapshot_iter: Optional[int] = Field(
        default=None, ge=0, description="Study this iteration instead of the final model"
    )
    eval_batches_per_task: int = Field(default=25, ge=1)
    routing_batches_per_task: int = Field(default=10, ge=1)


class ExperimentConfig(StrictModel):
    """One training run: suite, connector, model, schedule and diagnostics."""

    name: str = Field(default="run", min_length=1)
    seed: int = Field(default=0, ge=0)
    suite: SuiteConfig
    connector: ConnectorConfig = Field(default_factory=ConnectorConfig)
    model: ModelSettings = Field(default_factory=ModelSettings)
    train: TrainSettings = Field(default_factory=TrainSettings)
    diagnostics: DiagnosticsSettings = Field(default_factory=DiagnosticsSettings)
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def snapshot_within_run(self) -> "ExperimentConfig":
        snap = self.diagnostics.snapshot_iter
        if snap is not None and snap > self.train.total_iters:
            raise ValueError("diagnostics.snapshot_iter exceeds train.total_iters")
        alpha = self.connector.resampler.alpha
        if self.suite.geometry.n_visual_tokens % alpha != 0:
            raise ValueError(
                f"n_visual_tokens {self.suite.geometry.n_visual_tokens} "
                f"is not divisible by alpha {alpha}"
            )
        return self

    def task_specs(self) -> List[TaskSpec]:
        return [
            TaskSpec(t.id, t.tag, t.head, t.volume, t.conflict_angle, t.noise, t.visual)
            for t in self.suite.tasks
        ]

    def geometry(self) -> SuiteGeometry:
        return SuiteGeometry(**self.suite.geometry.model_dump())

    def to_model_config(self) -> ModelConfig:
        c, m = self.connector, self.model
        return ModelConfig(
            connector=c.kind,
            resampler=ResamplerConfig(c.resampler.alpha, c.resampler.method),
            cmoe=CmoeConfig(
                n_experts=c.cmoe.n_experts,
                router_kind=c.cmoe.router,
                strategy=c.cmoe.strategy,
                expert_hidden=c.cmoe.expert_hidden,
                d_out=c.d_out,
                top_k=c.cmoe.top_k,
            ),
            d_out=c.d_out,
            mlp_hidden=c.mlp_hidden,
            use_task_tokens=c.use_task_tokens,
            use_task_identifiers=m.use_task_identifiers,
            trunk_width=m.trunk_width,
            trunk_blocks=m.trunk_blocks,
            lora_mode=m.lora.mode,
            lora_rank=m.lora.rank,
            lora_alpha=m.lora.alpha,
            lora_experts=m.lora.n_experts,
            lora_top_k=m.lora.top_k,
        )

    def train_config(self, seed: Optional[int] = None) -> TrainConfig:
        t = self.train
        return TrainConfig(
            total_iters=t.total_iters,
            warmup_iters=t.warmup_iters,
            batch_size=t.batch_size,
            peak_lr=t.peak_lr,
            min_lr=t.min_lr,
            beta1=t.beta1,
            beta2=t.beta2,
            eps=t.eps,
            weight_decay=t.weight_decay,
            seed=self.seed if seed is None else seed,
            snapshot_iter=self.diagnostics.snapshot_iter,
        )


class GridVariant(StrictModel):
    """One row of the ablation grid; set sections replace the base config's."""

    name: str = Field(min_length=1)
    connector: Optional[ConnectorConfig] = None
    model: Optional[ModelSettings] = None


class GridConfig(StrictModel):
    name: str = Field(default="grid", min_length=1)
    seed: int = Field(default=0, ge=0)
    replicates: int = Field(default=1, ge=1, description="Seeds per variant")
    baseline: str = Field(description="Variant every other variant is compared with")
    base: ExperimentConfig
    variants: List[GridVariant] = Field(min_length=1)

    @model_validator(mode="after")
    def unique_variant_names(self) -> "GridConfig":
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise ValueError("variant names must be unique")
        if self.baseline not in names:
            raise ValueError(f"baseline variant {self.baseline!r} is not in the grid")
        return self

    def variant_names(self) -> List[str]:
        return [v.name for v in self.variants]

    def cell_config(self, variant: GridVariant, replicate: int, seed: int) -> ExperimentConfig:
        update = {"name": f"{variant.name}-r{replicate}", "seed": seed}
        if variant.connector is not None:
            update["connector"] = variant.connector
        if variant.model is not None:
            update["model"] = variant.model
        return ExperimentConfig.model_validate(
            {**self.base.model_dump(), **{k: _dump(v) for k, v in update.items()}}
        )


def _dump(value: object) -> object:
    return value.model_dump() if isinstance(value, BaseModel) else value
