"""
Multi-task training loop.

Each iteration draws one task with probability proportional to its data
volume, draws a batch of that task, and takes one AdamW step at the
scheduled learning rate. Iterations are numbered 1..total so the last step
runs at the minimum learning rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

from ..checkpoint import StateDict, state_dict
from ..config import config
from ..exceptions import ContractError, TrainingAbortedError
from ..logging_config import get_logger, log_training_progress
from ..numerics import AdamW, ScheduleConfig, backward, lr_at, make_rng
from ..numerics.optim import (
    DEFAULT_BETA1,
    DEFAULT_BETA2,
    DEFAULT_EPS,
    DEFAULT_WEIGHT_DECAY,
)
from .model import ToyMultiTaskModel
from .tasks import TaskSuite, proportional_sampler

logger = get_logger("training")


@dataclass(frozen=True)
class TrainConfig:
    total_iters: int = 5000
    warmup_iters: int = 500
    batch_size: int = 4
    peak_lr: float = 1e-3
    min_lr: float = 1e-5
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = DEFAULT_EPS
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    seed: int = 0
    snapshot_iter: Optional[int] = None

    def __post_init__(self) -> None:
        if self.total_iters < 0:
            raise ContractError("total iterations must be >= 0", rule_name="total_iters")
        if not 0 <= self.warmup_iters <= self.total_iters:
            raise ContractError("warm-up must lie in [0, total iterations]",
                                rule_name="warmup_le_total")
        if self.batch_size < 1:
            raise ContractError("batch size must be >= 1", rule_name="batch_size")
        if self.snapshot_iter is not None and not 0 <= self.snapshot_iter <= self.total_iters:
            raise ContractError("snapshot iteration outside the run",
                                rule_name="snapshot_iter")

    @property
    def schedule(self) -> ScheduleConfig:
        return ScheduleConfig(
            warmup_iters=self.warmup_iters,
            total_iters=self.total_iters,
            peak_lr=self.peak_lr,
            min_lr=self.min_lr,
        )


@dataclass(frozen=True)
class TrainLogEntry:
    iteration: int
    task_id: str
    loss: float
    lr: float


@dataclass
class TrainResult:
    log: List[TrainLogEntry] = field(default_factory=list)
    warmup_state: Optional[StateDict] = None
    snapshot_state: Optional[StateDict] = None

    @property
    def final_loss(self) -> float:
        return self.log[-1].loss if self.log else math.nan


def train(
    model: ToyMultiTaskModel,
    suite: TaskSuite,
    cfg: TrainConfig,
    run_id: str = "no_run",
) -> TrainResult:
    """
    Train ``model`` in place.

    The parameter state right after the warm-up (and at ``snapshot_iter`` if
    set) is kept in the result. A non-finite loss aborts the run.
    """
    optimizer = AdamW(
        model.trainable_parameters(),
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )
    sampler = proportional_sampler(suite, make_rng(cfg.seed, "sampler"))
    batch_rng = make_rng(cfg.seed, "batches")
    schedule = cfg.schedule
    log_every = config.runtime.log_every
    result = TrainResult()

    def keep_states(iteration: int) -> None:
        if iteration == cfg.warmup_iters:
            result.warmup_state = state_dict(model)
        if cfg.snapshot_iter is not None and iteration == cfg.snapshot_iter:
            result.snapshot_state = state_dict(model)

    keep_states(0)
    for iteration in range(1, cfg.total_iters + 1):
        task_id = next(sampler)
        batch = suite.sample_batch(task_id, batch_rng, cfg.batch_size)
        loss = model.loss(batch)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingAbortedError(iteration, task_id, value)

        lr = lr_at(iteration, schedule)
        optimizer.zero_grad()
        backward(loss)
        optimizer.step(lr)
        result.log.append(TrainLogEntry(iteration, task_id, value, lr))

        if iteration % log_every == 0 or iteration == cfg.total_iters:
            log_training_progress(run_id, iteration, task_id, value, lr)
        keep_states(iteration)

    optimizer.zero_grad()
    logger.debug("training finished", extra={"run_id": run_id, "iterations": cfg.total_iters})
    return result
