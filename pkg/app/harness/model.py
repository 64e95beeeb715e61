"""
Toy multi-task model: connector → pooled visual embedding → small
"language" trunk → one output head per head kind.

The trunk stands in for the language model. Its two hidden blocks are the
layers LoRA and LoRA-MoE adapt; output heads stay plain trainable linears
shared by every task of a head kind.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Literal, Optional

import numpy as np

from ..connector import (
    CmoeConfig,
    Connector,
    ConnectorKind,
    ResamplerConfig,
)
from ..exceptions import ContractError
from ..lora import wrap_linear
from ..numerics import Linear, Module, Node, constant, ops
from ..routers import RouterWeights
from .tasks import TAG_ORDER, HeadKind, SyntheticBatch, TaskSuite

LoraMode = Literal["none", "lora", "lora-moe"]


class WatchedScope(str, Enum):
    CONNECTOR = "connector"
    CONNECTOR_AND_HEAD = "connector+head"


@dataclass(frozen=True)
class ModelConfig:
    connector: ConnectorKind = ConnectorKind.CMOE
    resampler: ResamplerConfig = field(default_factory=ResamplerConfig)
    cmoe: CmoeConfig = field(default_factory=lambda: CmoeConfig(d_out=32))
    d_out: int = 32
    mlp_hidden: Optional[int] = None
    use_task_tokens: bool = True
    use_task_identifiers: bool = True
    trunk_width: int = 128
    trunk_blocks: int = 2
    head_init_std: float = 0.01
    lora_mode: LoraMode = "none"
    lora_rank: int = 8
    lora_alpha: float = 16.0
    lora_experts: int = 5
    lora_top_k: int = 2

    def __post_init__(self) -> None:
        if self.connector == ConnectorKind.CMOE and self.cmoe.d_out != self.d_out:
            raise ContractError(
                f"cmoe output width {self.cmoe.d_out} differs from d_out {self.d_out}",
                rule_name="d_out",
            )
        if self.trunk_blocks < 1 or self.trunk_width < 1:
            raise ContractError("trunk needs >= 1 block of positive width",
                                rule_name="trunk_shape")


@dataclass(frozen=True)
class ForwardPass:
    output: Node
    routing: Optional[RouterWeights]


@dataclass(frozen=True)
class Prediction:
    task_id: str
    head_kind: HeadKind
    labels: Optional[np.ndarray] = None
    boxes: Optional[np.ndarray] = None


class ToyMultiTaskModel(Module):
    def __init__(self, suite: TaskSuite, cfg: ModelConfig, rng: np.random.Generator) -> None:
        geometry = suite.geometry
        visual_ids = suite.visual_task_ids
        if not visual_ids:
            raise ContractError("suite has no task with visual input", rule_name="visual_task")
        if geometry.n_visual_tokens % cfg.resampler.alpha != 0:
            raise ContractError(
                f"{geometry.n_visual_tokens} visual tokens are not divisible by "
                f"alpha {cfg.resampler.alpha}",
                rule_name="alpha_divides_tokens",
            )
        self.cfg = cfg
        self._suite = suite
        self._tokens_per_sample = geometry.n_visual_tokens // cfg.resampler.alpha

        self.connector = Connector(
            cfg.connector,
            geometry.d_visual,
            cfg.resampler,
            visual_ids,
            rng,
            cmoe=cfg.cmoe,
            d_out=cfg.d_out,
            hidden=cfg.mlp_hidden,
            use_task_tokens=cfg.use_task_tokens,
        )
        self.text_encoder: Optional[Linear] = None
        if len(visual_ids) < len(suite.task_ids):
            self.text_encoder = Linear(geometry.latent_dim, cfg.d_out, rng)

        tag_width = len(TAG_ORDER) if cfg.use_task_identifiers else 0
        self.trunk_in = Linear(cfg.d_out + tag_width, cfg.trunk_width, rng)
        self.trunk: List[Module] = []
        for _ in range(cfg.trunk_blocks):
            block: Module = Linear(cfg.trunk_width, cfg.trunk_width, rng)
            if cfg.lora_mode != "none":
                block = wrap_linear(
                    block,  # type: ignore[arg-type]
                    cfg.lora_mode, cfg.lora_rank, cfg.lora_alpha, rng,
                    n_experts=cfg.lora_experts, top_k=cfg.lora_top_k,
                )
            self.trunk.append(block)

        kinds = sorted({suite.spec(t).head_kind for t in suite.task_ids}, key=lambda k: k.value)
        self.heads: Dict[str, Linear] = {
            kind.value: Linear(cfg.trunk_width, geometry.output_dim(kind), rng,
                               init_std=cfg.head_init_std)
            for kind in kinds
        }

    @property
    def task_ids(self) -> List[str]:
        return self._suite.task_ids

    def _embed(self, batch: SyntheticBatch) -> ForwardPass:
        spec = self._suite.spec(batch.task_id)
        if not spec.visual:
            assert self.text_encoder is not None
            return ForwardPass(self.text_encoder(constant(batch.text)), None)
        aligned, routing = self.connector(constant(batch.features), batch.task_id)
        pooled = ops.pool_rows(aligned, self._tokens_per_sample, "avg")
        return ForwardPass(pooled, routing)

    def forward(self, batch: SyntheticBatch) -> ForwardPass:
        embedded = self._embed(batch)
        x = embedded.output
        if self.cfg.use_task_identifiers:
            tag = np.zeros((batch.batch_size, len(TAG_ORDER)))
            tag[:, TAG_ORDER.index(self._suite.spec(batch.task_id).tag)] = 1.0
            x = ops.concat_cols([x, constant(tag)])
        h = ops.gelu(self.trunk_in(x))
        for block in self.trunk:
            h = ops.add(h, ops.gelu(block(h)))  # type: ignore[operator]
        out = self.heads[batch.head_kind.value](h)
        if batch.head_kind == HeadKind.BBOX_REGRESSION:
            out = ops.sigmoid(out)
        return ForwardPass(out, embedded.routing)

    def loss(self, batch: SyntheticBatch) -> Node:
        out = self.forward(batch).output
        if batch.head_kind == HeadKind.CLASSIFICATION:
            return ops.loss(out, batch.targets, "cross-entropy")
        if batch.head_kind == HeadKind.BBOX_REGRESSION:
            return ops.loss(out, batch.targets, "mse")
        vocab = self._suite.geometry.vocab_size
        logits = ops.reshape(out, batch.targets.shape[0], vocab)
        return ops.loss(logits, batch.targets, "cross-entropy")

    def route(self, batch: SyntheticBatch) -> Optional[RouterWeights]:
        """Router weights of the connector for this batch (``None`` off Connector-MoE)."""
        return self._embed(batch).routing

    def predict(self, batch: SyntheticBatch) -> Prediction:
        out = self.forward(batch).output.value
        if batch.head_kind == HeadKind.CLASSIFICATION:
            return Prediction(batch.task_id, batch.head_kind, labels=out.argmax(axis=1))
        if batch.head_kind == HeadKind.BBOX_REGRESSION:
            return Prediction(batch.task_id, batch.head_kind, boxes=out * 100.0)
        g = self._suite.geometry
        tokens = out.reshape(batch.batch_size * g.seq_len, g.vocab_size).argmax(axis=1)
        return Prediction(batch.task_id, batch.head_kind,
                          labels=tokens.reshape(batch.batch_size, g.seq_len))


def watched_parameters(model: ToyMultiTaskModel, scope: WatchedScope) -> Dict[str, Node]:
    """θ for the interference study: connector only, or connector plus trunk and heads."""
    params = model.trainable_parameters()
    if scope == WatchedScope.CONNECTOR:
        return {k: v for k, v in params.items() if k.startswith("connector.")}
    return {k: v for k, v in params.items() if not k.startswith("text_encoder.")}
