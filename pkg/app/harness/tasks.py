"""
Synthetic multi-task suite.

Every sample starts from a latent vector z ~ N(0, I). Visual tokens are a
shared linear image of z plus noise, so all tasks see the same kind of
features. Targets come from a map shared by all tasks of one head kind,
followed by a rotation of each coordinate pair by the task's conflict angle.
Two tasks with equal angles therefore want the same thing; a difference of π
turns every binary label (and every even-sized sector code) around.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Union

import numpy as np

from ..exceptions import ContractError
from ..numerics import Matrix


class TaskTag(str, Enum):
    """Text-level task identifiers prepended to every instruction."""

    QA = "[qa]"
    VQA = "[vqa]"
    CAPTION = "[caption]"
    REFER = "[refer]"
    IDENTIFY = "[identify]"
    CLS = "[cls]"


TAG_ORDER: List[TaskTag] = list(TaskTag)


class HeadKind(str, Enum):
    CLASSIFICATION = "classification"
    BBOX_REGRESSION = "bbox-regression"
    TOKEN_MATCH = "token-match"


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    tag: TaskTag
    head_kind: HeadKind
    volume: int = 1
    conflict_angle: float = 0.0
    noise: float = 0.05
    visual: bool = True

    def __post_init__(self) -> None:
        if not self.task_id:
            raise ContractError("task id must not be empty", rule_name="task_id")
        if self.volume < 1:
            raise ContractError(
                f"task {self.task_id} needs a data volume >= 1", rule_name="volume_positive"
            )
        if self.noise < 0.0:
            raise ContractError("noise scale must be >= 0", rule_name="noise_nonnegative")


@dataclass(frozen=True)
class SuiteGeometry:
    """Shapes shared by every task of a suite."""

    n_visual_tokens: int = 8
    d_visual: int = 16
    latent_dim: int = 8
    n_classes: int = 2
    seq_len: int = 4
    vocab_size: int = 8

    def __post_init__(self) -> None:
        if min(self.n_visual_tokens, self.d_visual, self.latent_dim) < 1:
            raise ContractError("suite dimensions must be positive", rule_name="dims_positive")
        if self.latent_dim < 2:
            raise ContractError("latent space needs at least two dimensions",
                                rule_name="latent_dim")
        if self.n_classes < 2 or self.vocab_size < 2 or self.seq_len < 1:
            raise ContractError("need >= 2 classes, >= 2 words and >= 1 position",
                                rule_name="target_sizes")

    def output_dim(self, kind: HeadKind) -> int:
        if kind == HeadKind.CLASSIFICATION:
            return self.n_classes
        if kind == HeadKind.BBOX_REGRESSION:
            return 4
        return self.seq_len * self.vocab_size


@dataclass(frozen=True)
class SyntheticBatch:
    """
    One batch of one task.

    ``features`` stacks the B per-sample token grids row-wise into a
    (B·N_v)×D_v matrix. ``targets`` is one-hot (classification), corners on
    the unit grid (bbox) or one-hot (B·L)×V (token-match). ``labels`` holds
    the integer classes / token ids, ``boxes`` the corners on the 100 grid.
    """

    task_id: str
    head_kind: HeadKind
    features: Matrix
    text: Matrix
    targets: Matrix
    labels: Optional[np.ndarray] = None
    boxes: Optional[Matrix] = None

    @property
    def batch_size(self) -> int:
        return self.text.shape[0]


def _sector(u: np.ndarray, v: np.ndarray, n: int) -> np.ndarray:
    angle = np.mod(np.arctan2(v, u), 2.0 * math.pi)
    return np.minimum((angle / (2.0 * math.pi / n)).astype(np.int64), n - 1)


def _rotate_pairs(u: np.ndarray, angle: float) -> np.ndarray:
    """Rotate coordinates (0,1), (2,3), … of every row by ``angle``."""
    if angle == 0.0:
        return u
    out = u.copy()
    c, s = math.cos(angle), math.sin(angle)
    for k in range(0, u.shape[1] - 1, 2):
        a, b = u[:, k], u[:, k + 1]
        out[:, k] = c * a - s * b
        out[:, k + 1] = s * a + c * b
    return out


@dataclass
class TaskSuite:
    """Generators for a set of tasks over one shared feature basis."""

    specs: Dict[str, TaskSpec]
    geometry: SuiteGeometry
    basis: Matrix
    head_maps: Dict[HeadKind, Matrix]
    _order: List[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self._order:
            self._order = list(self.specs)

    @property
    def task_ids(self) -> List[str]:
        return list(self._order)

    @property
    def visual_task_ids(self) -> List[str]:
        return [t for t in self._order if self.specs[t].visual]

    @property
    def volumes(self) -> Dict[str, int]:
        return {t: self.specs[t].volume for t in self._order}

    def spec(self, task_id: str) -> TaskSpec:
        if task_id not in self.specs:
            raise ContractError(f"task {task_id!r} has no data generator",
                                rule_name="known_task")
        return self.specs[task_id]

    def sample_batch(
        self, task_id: str, rng: np.random.Generator, batch_size: int
    ) -> SyntheticBatch:
        """
        Draw one batch. The draws from ``rng`` do not depend on the task, so
        two tasks sampled from equal generators see the same inputs.
        """
        spec = self.spec(task_id)
        if batch_size < 1:
            raise ContractError("batch size must be >= 1", rule_name="batch_size")
        g = self.geometry
        z = rng.standard_normal((batch_size, g.latent_dim))
        eps = rng.standard_normal((batch_size, g.n_visual_tokens * g.d_visual))
        text_eps = rng.standard_normal((batch_size, g.latent_dim))

        grids = z @ self.basis + spec.noise * eps
        features = grids.reshape(batch_size * g.n_visual_tokens, g.d_visual)
        text = z + spec.noise * text_eps
        u = _rotate_pairs(z @ self.head_maps[spec.head_kind], spec.conflict_angle)

        if spec.head_kind == HeadKind.CLASSIFICATION:
            labels = _sector(u[:, 0], u[:, 1], g.n_classes)
            targets = np.eye(g.n_classes)[labels]
            return SyntheticBatch(task_id, spec.head_kind, features, text, targets, labels)

        if spec.head_kind == HeadKind.BBOX_REGRESSION:
            cx = 50.0 + 25.0 * np.tanh(u[:, 0])
            cy = 50.0 + 25.0 * np.tanh(u[:, 1])
            hw = 5.0 + 15.0 / (1.0 + np.exp(-u[:, 2]))
            hh = 5.0 + 15.0 / (1.0 + np.exp(-u[:, 3]))
            boxes = np.stack([cx - hw, cy - hh, cx + hw, cy + hh], axis=1)
            return SyntheticBatch(
                task_id, spec.head_kind, features, text, boxes / 100.0, boxes=boxes
            )

        tokens = np.stack(
            [_sector(u[:, 2 * pos], u[:, 2 * pos + 1], g.vocab_size) for pos in range(g.seq_len)],
            axis=1,
        )
        targets = np.eye(g.vocab_size)[tokens.reshape(-1)]
        return SyntheticBatch(task_id, spec.head_kind, features, text, targets, tokens)


def make_task_suite(
    specs: Sequence[TaskSpec],
    rng: np.random.Generator,
    geometry: Optional[SuiteGeometry] = None,
) -> TaskSuite:
    """Build the shared basis and the per-head-kind target maps."""
    if not specs:
        raise ContractError("a suite needs at least one task", rule_name="nonempty_suite")
    seen: Dict[str, TaskSpec] = {}
    for spec in specs:
        if spec.task_id in seen:
            raise ContractError(f"duplicate task id {spec.task_id!r}", rule_name="unique_task_id")
        seen[spec.task_id] = spec

    g = geometry or SuiteGeometry()
    basis = rng.normal(0.0, 1.0 / math.sqrt(g.latent_dim),
                       size=(g.latent_dim, g.n_visual_tokens * g.d_visual))
    head_maps: Dict[HeadKind, Matrix] = {}
    for kind in HeadKind:
        width = 4 if kind == HeadKind.BBOX_REGRESSION else (
            2 if kind == HeadKind.CLASSIFICATION else 2 * g.seq_len
        )
        head_maps[kind] = rng.normal(0.0, 1.0 / math.sqrt(g.latent_dim),
                                     size=(g.latent_dim, width))
    return TaskSuite(specs=seen, geometry=g, basis=basis, head_maps=head_maps,
                     _order=[s.task_id for s in specs])


def proportional_sampler(
    source: Union[TaskSuite, Mapping[str, int]], rng: np.random.Generator
) -> Iterator[str]:
    """Endless stream of task ids, task i drawn with probability volume_i / Σ volume."""
    volumes = source.volumes if isinstance(source, TaskSuite) else dict(source)
    if any(v < 0 for v in volumes.values()):
        raise ContractError("task volumes must be >= 0", rule_name="volume_nonnegative")
    total = sum(volumes.values())
    if total <= 0:
        raise ContractError("total data volume is zero", rule_name="volume_positive")
    task_ids = list(volumes)
    probs = np.array([volumes[t] / total for t in task_ids])
    return _draw(task_ids, probs, rng)


def _draw(task_ids: List[str], probs: np.ndarray, rng: np.random.Generator) -> Iterator[str]:
    while True:
        yield task_ids[int(rng.choice(len(task_ids), p=probs))]
