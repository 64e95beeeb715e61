"""AdamW with decoupled weight decay and the warm-up + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from ..exceptions import ContractError, DimensionError, NumericError
from .tensor import Matrix, Node

DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.95
DEFAULT_WEIGHT_DECAY = 0.05
DEFAULT_EPS = 1e-8


@dataclass
class AdamWState:
    """Moments and hyperparameters for one parameter tensor."""

    m: Matrix
    v: Matrix
    step: int = 0
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = DEFAULT_EPS
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    learning_rate: float = 1e-3

    @classmethod
    def for_parameter(cls, param: Matrix, **hyper: float) -> "AdamWState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), **hyper)


def adamw_step(param: Matrix, grad: Matrix, state: AdamWState) -> Matrix:
    """
    One AdamW update; mutates ``state`` and returns the new parameter.

    θ ← θ − lr·(m̂ / (√v̂ + ε) + wd·θ)
    """
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise DimensionError("adamw shapes differ", param.shape, grad.shape, state.m.shape)
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient passed to AdamW", {"step": state.step + 1})

    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    update = m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * param
    return param - state.learning_rate * update


@dataclass
class AdamW:
    """AdamW over a name → parameter mapping."""

    params: Dict[str, Node]
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = DEFAULT_EPS
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    states: Dict[str, AdamWState] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, node in self.params.items():
            self.states[name] = AdamWState.for_parameter(
                node.value,
                beta1=self.beta1,
                beta2=self.beta2,
                eps=self.eps,
                weight_decay=self.weight_decay,
            )

    def step(self, learning_rate: float) -> None:
        for name, node in self.params.items():
            state = self.states[name]
            state.learning_rate = learning_rate
            node.value = adamw_step(node.value, node.grad, state)

    def zero_grad(self) -> None:
        for node in self.params.values():
            node.zero_grad()


@dataclass(frozen=True)
class ScheduleConfig:
    warmup_iters: int
    total_iters: int
    peak_lr: float
    min_lr: float


def lr_at(iteration: int, cfg: ScheduleConfig) -> float:
    """Linear 0→peak over the warm-up, then cosine peak→min until ``total_iters``."""
    if cfg.warmup_iters > cfg.total_iters:
        raise ContractError(
            "warm-up longer than training", rule_name="warmup_le_total"
        )
    if iteration < 0 or iteration > cfg.total_iters:
        raise ContractError(
            f"iteration {iteration} outside [0, {cfg.total_iters}]",
            rule_name="iteration_range",
        )
    if iteration <= cfg.warmup_iters:
        if cfg.warmup_iters == 0:
            return cfg.peak_lr
        return cfg.peak_lr * iteration / cfg.warmup_iters
    span = cfg.total_iters - cfg.warmup_iters
    progress = (iteration - cfg.warmup_iters) / span
    return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * progress))
