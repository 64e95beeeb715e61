"""
Vision-to-language connectors.

The Connector-MoE connector aggregates visual tokens with a resampler, then
mixes N projection experts (two-layer perceptrons) with per-token router
weights. The router sees the aggregated token, the task token of the current
task, or both concatenated. Linear and MLP connectors are the baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ContractError, DimensionError
from .numerics import MLP, Linear, Matrix, Module, Node, layers, ops, parameter
from .routers import (
    RouterKind,
    RouterNet,
    RouterWeights,
    constant_route,
    hard_route,
    moe_combine,
)

TASK_TOKEN_STD = 0.02


class AggregationMethod(str, Enum):
    PROJECTION = "projection"
    MAX_POOL = "max-pool"
    AVG_POOL = "avg-pool"
    NONE = "none"


class RoutingStrategy(str, Enum):
    TOKEN = "token"
    TASK = "task"
    TOKEN_AND_TASK = "token-and-task"

    @property
    def needs_task_tokens(self) -> bool:
        return self is not RoutingStrategy.TOKEN


@dataclass(frozen=True)
class ResamplerConfig:
    alpha: int = 1
    method: AggregationMethod = AggregationMethod.PROJECTION

    def __post_init__(self) -> None:
        if self.alpha < 1:
            raise ContractError("compression rate must be >= 1", rule_name="alpha_positive")
        if self.method == AggregationMethod.NONE and self.alpha != 1:
            raise ContractError(
                "aggregation 'none' requires alpha = 1", rule_name="none_forces_alpha"
            )

    def output_dim(self, d_v: int) -> int:
        if self.method == AggregationMethod.PROJECTION:
            return d_v * self.alpha
        return d_v

    def validate_tokens(self, n_v: int) -> None:
        if n_v % self.alpha != 0:
            raise ContractError(
                f"token count {n_v} is not divisible by alpha {self.alpha}",
                rule_name="alpha_divides_tokens",
            )


class Resampler(Module):
    """Compresses α adjacent visual tokens into one aggregated token."""

    def __init__(self, d_v: int, cfg: ResamplerConfig, rng: np.random.Generator) -> None:
        self.cfg = cfg
        self.d_v = d_v
        self.projection: Optional[Linear] = None
        if cfg.method == AggregationMethod.PROJECTION:
            width = d_v * cfg.alpha
            self.projection = Linear(width, width, rng)

    @property
    def d_out(self) -> int:
        return self.cfg.output_dim(self.d_v)

    def __call__(self, f_v: Node) -> Node:
        return resample(f_v, self.cfg, self.projection)


def resample(f_v: Node, cfg: ResamplerConfig, projection: Optional[Linear] = None) -> Node:
    """
    Aggregate N_v×D_v tokens into N_v/α rows.

    projection: concatenate α adjacent tokens then apply the learned D_vα→D_vα map;
    max-pool / avg-pool: elementwise pool over the α tokens; none: identity.
    """
    n_v, d_v = f_v.shape
    cfg.validate_tokens(n_v)
    if cfg.method == AggregationMethod.NONE:
        return f_v
    if cfg.method == AggregationMethod.PROJECTION:
        if projection is None:
            raise ContractError("projection resampler needs its weights", rule_name="projection")
        concatenated = ops.reshape(f_v, n_v // cfg.alpha, d_v * cfg.alpha)
        return projection(concatenated)
    method = "max" if cfg.method == AggregationMethod.MAX_POOL else "avg"
    return ops.pool_rows(f_v, cfg.alpha, method)  # type: ignore[arg-type]


@dataclass(frozen=True)
class CmoeConfig:
    n_experts: int = 5
    router_kind: RouterKind = RouterKind.SOFT_SOFTMAX
    strategy: RoutingStrategy = RoutingStrategy.TOKEN_AND_TASK
    expert_hidden: Optional[int] = None
    d_out: int = 64
    top_k: int = 2
    activation: layers.Activation = "gelu"

    def __post_init__(self) -> None:
        if self.n_experts < 1:
            raise ContractError("need at least one expert", rule_name="n_experts")
        if self.router_kind == RouterKind.SPARSE and not 1 <= self.top_k <= self.n_experts:
            raise ContractError(
                f"top-k {self.top_k} outside [1, {self.n_experts}]", rule_name="top_k_range"
            )

    def router_input_dim(self, d_ag: int) -> int:
        if self.strategy == RoutingStrategy.TOKEN_AND_TASK:
            return 2 * d_ag
        return d_ag


class ProjectionExpert(MLP):
    """Two-layer perceptron D_ag → hidden → D_t."""


class TaskTokens(Module):
    """One learned 1×D_ag vector per task, initialized from N(0, 0.02²)."""

    def __init__(self, task_ids: Sequence[str], d_ag: int, rng: np.random.Generator) -> None:
        self.tokens: Dict[str, Node] = {
            task_id: parameter(rng.normal(0.0, TASK_TOKEN_STD, size=(1, d_ag)))
            for task_id in task_ids
        }

    def __contains__(self, task_id: str) -> bool:
        return task_id in self.tokens

    def __getitem__(self, task_id: str) -> Node:
        if task_id not in self.tokens:
            raise ContractError(f"unknown task id {task_id!r}", rule_name="known_task")
        return self.tokens[task_id]


def _router_input(
    f_v_ag: Node,
    strategy: RoutingStrategy,
    task_token: Optional[Node],
) -> Node:
    if strategy == RoutingStrategy.TOKEN:
        return f_v_ag
    assert task_token is not None
    if task_token.shape[1] != f_v_ag.shape[1]:
        raise DimensionError("task token width differs from aggregated tokens",
                             task_token.shape, f_v_ag.shape)
    repeated = ops.repeat_rows(task_token, f_v_ag.shape[0])
    if strategy == RoutingStrategy.TASK:
        return repeated
    return ops.concat_cols([f_v_ag, repeated])


def cmoe_forward(
    f_v_ag: Node,
    task: str,
    cfg: CmoeConfig,
    experts: Sequence[ProjectionExpert],
    router_net: Optional[RouterNet],
    task_tokens: Optional[TaskTokens],
    task_ids: Optional[Sequence[str]] = None,
) -> Tuple[Node, RouterWeights]:
    """
    Route aggregated tokens over the projection experts.

    Returns the T×D_t mixture and the router weights that produced it.
    """
    if task_ids is not None and task not in task_ids:
        raise ContractError(f"unknown task id {task!r}", rule_name="known_task")
    if len(experts) != cfg.n_experts:
        raise ContractError(
            f"{len(experts)} experts configured for N={cfg.n_experts}", rule_name="n_experts"
        )
    d_in = experts[0].fc1.d_in
    if f_v_ag.shape[1] != d_in:
        raise DimensionError("aggregated tokens do not fit the experts",
                             f_v_ag.shape, (f_v_ag.shape[0], d_in))

    tokens = f_v_ag.shape[0]
    kind = cfg.router_kind
    if kind == RouterKind.CONSTANT:
        weights = constant_route(tokens, cfg.n_experts)
    elif kind == RouterKind.HARD:
        if task_ids is None:
            raise ContractError("hard routing needs the task order", rule_name="task_order")
        token_type = list(task_ids).index(task) % cfg.n_experts
        weights = hard_route([token_type] * tokens, cfg.n_experts)
    else:
        if router_net is None:
            raise ContractError(f"{kind.value} routing needs a router network",
                                rule_name="router_net")
        task_token = None
        if cfg.strategy.needs_task_tokens:
            if task_tokens is None:
                raise ContractError(
                    f"strategy {cfg.strategy.value} needs task tokens", rule_name="task_tokens"
                )
            task_token = task_tokens[task]
        weights = router_net(_router_input(f_v_ag, cfg.strategy, task_token))

    outputs = [expert(f_v_ag) for expert in experts]
    return moe_combine(outputs, weights), weights


class ConnectorKind(str, Enum):
    LINEAR = "linear"
    MLP = "mlp"
    CMOE = "cmoe"


def baseline_forward(f_v_ag: Node, kind: ConnectorKind, projector: Module) -> Node:
    """Linear: one affine map; mlp: the two-layer perceptron baseline."""
    if kind == ConnectorKind.LINEAR:
        assert isinstance(projector, Linear)
        if f_v_ag.shape[1] != projector.d_in:
            raise DimensionError("linear connector input width differs",
                                 f_v_ag.shape, (f_v_ag.shape[0], projector.d_in))
        return projector(f_v_ag)
    if kind == ConnectorKind.MLP:
        assert isinstance(projector, MLP)
        if f_v_ag.shape[1] != projector.fc1.d_in:
            raise DimensionError("mlp connector input width differs",
                                 f_v_ag.shape, (f_v_ag.shape[0], projector.fc1.d_in))
        return projector(f_v_ag)
    raise ContractError(f"{kind.value} is not a baseline connector", rule_name="baseline_kind")


class Connector(Module):
    """
    Resampler followed by a linear, MLP or Connector-MoE projection.

    ``__call__`` returns the aligned tokens and, for Connector-MoE, the
    router weights of the forward pass (``None`` for baselines).
    """

    def __init__(
        self,
        kind: ConnectorKind,
        d_v: int,
        resampler_cfg: ResamplerConfig,
        task_ids: Sequence[str],
        rng: np.random.Generator,
        cmoe: Optional[CmoeConfig] = None,
        d_out: int = 64,
        hidden: Optional[int] = None,
        use_task_tokens: bool = True,
    ) -> None:
        self.kind = kind
        self._task_ids = list(task_ids)
        self.resampler = Resampler(d_v, resampler_cfg, rng)
        d_ag = self.resampler.d_out
        self.d_ag = d_ag
        self.cmoe_cfg = cmoe
        self.projector: Optional[Module] = None
        self.experts: List[ProjectionExpert] = []
        self.router: Optional[RouterNet] = None
        self.task_tokens: Optional[TaskTokens] = None

        if kind == ConnectorKind.LINEAR:
            self.projector = Linear(d_ag, d_out, rng)
        elif kind == ConnectorKind.MLP:
            self.projector = MLP(d_ag, hidden or d_ag, d_out, rng)
        else:
            cfg = cmoe or CmoeConfig(d_out=d_out)
            self.cmoe_cfg = cfg
            if (cfg.router_kind.needs_network and cfg.strategy.needs_task_tokens
                    and not use_task_tokens):
                raise ContractError(
                    f"strategy {cfg.strategy.value} needs task tokens",
                    rule_name="task_tokens",
                )
            width = cfg.expert_hidden or d_ag
            self.experts = [
                ProjectionExpert(d_ag, width, cfg.d_out, rng, activation=cfg.activation)
                for _ in range(cfg.n_experts)
            ]
            if cfg.router_kind.needs_network:
                self.router = RouterNet(
                    cfg.router_input_dim(d_ag), cfg.n_experts, cfg.router_kind, rng,
                    top_k=cfg.top_k,
                )
            if use_task_tokens and cfg.router_kind.needs_network \
                    and cfg.strategy.needs_task_tokens:
                self.task_tokens = TaskTokens(self._task_ids, d_ag, rng)

    @property
    def task_ids(self) -> List[str]:
        return list(self._task_ids)

    @property
    def d_out(self) -> int:
        if self.kind == ConnectorKind.CMOE:
            assert self.cmoe_cfg is not None
            return self.cmoe_cfg.d_out
        if isinstance(self.projector, Linear):
            return self.projector.d_out
        assert isinstance(self.projector, MLP)
        return self.projector.fc2.d_out

    def __call__(self, f_v: Node, task: str) -> Tuple[Node, Optional[RouterWeights]]:
        if task not in self._task_ids:
            raise ContractError(f"unknown task id {task!r}", rule_name="known_task")
        f_v_ag = self.resampler(f_v)
        if self.kind == ConnectorKind.CMOE:
            assert self.cmoe_cfg is not None
            return cmoe_forward(
                f_v_ag, task, self.cmoe_cfg, self.experts, self.router,
                self.task_tokens, self._task_ids,
            )
        assert self.projector is not None
        return baseline_forward(f_v_ag, self.kind, self.projector), None


@dataclass
class RoutingTable:
    """Mean router weight per task (rows) and expert (columns)."""

    task_ids: List[str]
    weights: Matrix
    token_counts: List[int] = field(default_factory=list)

    def row(self, task_id: str) -> Matrix:
        return self.weights[self.task_ids.index(task_id)]


def routing_summary(records: Sequence[Tuple[str, RouterWeights]]) -> RoutingTable:
    """Average router weights over all tokens and batches of each task."""
    if not records:
        raise ContractError("routing summary needs at least one record", rule_name="nonempty")
    n_experts = records[0][1].n_experts
    sums: Dict[str, np.ndarray] = {}
    counts: Dict[str, int] = {}
    for task_id, weights in records:
        if weights.n_experts != n_experts:
            raise DimensionError("records disagree on expert count",
                                 (n_experts,), (weights.n_experts,))
        sums[task_id] = sums.get(task_id, np.zeros(n_experts)) + weights.matrix.sum(axis=0)
        counts[task_id] = counts.get(task_id, 0) + weights.n_tokens
    task_ids = list(sums)
    table = np.stack([sums[t] / counts[t] for t in task_ids])
    return RoutingTable(task_ids, table, [counts[t] for t in task_ids])
