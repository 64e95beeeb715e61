"""
Gradient-interference diagnostics for multi-task training.

From per-(task, batch) gradients of a watched parameter set this module
derives the gradient-direction matrix GD, the gradient-magnitude similarity
matrix GM, per-task tug-of-war indexes Σ_j GD·GM, and per-parameter
statistics scores |Σ_i g_i| / Σ_i |g_i| with their ten-bin histogram.

GD uses the paired-batch estimator: batch b of every task is compared with
batch b of every other task, so GD[i, j] is the mean cosine similarity of the
paired gradients and diag(GD) = 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Protocol, Sequence

import numpy as np

from .exceptions import ContractError, DimensionError, NumericError
from .numerics import Matrix, Node, backward, make_rng

N_BINS = 10


class GradientModel(Protocol):
    def loss(self, batch: object) -> Node: ...

    def zero_grad(self) -> None: ...


class BatchSource(Protocol):
    @property
    def task_ids(self) -> List[str]: ...

    def sample_batch(
        self, task_id: str, rng: np.random.Generator, batch_size: int
    ) -> object: ...


@dataclass(frozen=True)
class GradientSample:
    task_id: str
    batch_index: int
    g: np.ndarray
    norm: float = field(init=False)

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.g)):
            raise NumericError(
                "gradient sample contains non-finite entries",
                {"task_id": self.task_id, "batch_index": self.batch_index},
            )
        object.__setattr__(self, "norm", float(np.linalg.norm(self.g)))


@dataclass(frozen=True)
class InterferenceMatrices:
    gd: Matrix
    gm: Matrix
    task_ids: List[str]


@dataclass(frozen=True)
class StatScoreHistogram:
    counts: List[int]
    total: int

    @property
    def proportions(self) -> List[float]:
        return [c / self.total for c in self.counts]

    @property
    def edges(self) -> List[float]:
        return [i / N_BINS for i in range(N_BINS + 1)]

    def mass_between(self, low: float, high: float) -> float:
        """Proportion in the bins covering [low, high]."""
        first, last = int(round(low * N_BINS)), int(round(high * N_BINS))
        return sum(self.proportions[first:last])


def collect_gradients(
    model: GradientModel,
    suite: BatchSource,
    batches_per_task: int,
    watched: Mapping[str, Node],
    rng: np.random.Generator,
    batch_size: int = 4,
    task_ids: Sequence[str] | None = None,
) -> List[GradientSample]:
    """
    Record the flattened gradient of ``watched`` for every (task, batch).

    Parameters are not updated between samples. Batch b of every task draws
    from the same random stream, so tasks are compared on common inputs.
    """
    if batches_per_task < 2:
        raise ContractError("need at least two batches per task", rule_name="batches_per_task")
    if not watched:
        raise ContractError("watched parameter set is empty", rule_name="watched_nonempty")
    tasks = list(task_ids) if task_ids is not None else suite.task_ids
    names = list(watched)
    batch_seeds = rng.integers(0, 2**63 - 1, size=batches_per_task)

    samples: List[GradientSample] = []
    for task_id in tasks:
        for b, seed in enumerate(batch_seeds):
            batch = suite.sample_batch(task_id, make_rng(int(seed)), batch_size)
            model.zero_grad()
            backward(model.loss(batch))
            flat = np.concatenate([watched[n].grad.ravel() for n in names])
            samples.append(GradientSample(task_id, b, flat))
    model.zero_grad()
    return samples


def group_by_task(samples: Sequence[GradientSample]) -> Dict[str, List[GradientSample]]:
    """Samples per task in first-seen task order, sorted by batch index."""
    grouped: Dict[str, List[GradientSample]] = {}
    for s in samples:
        grouped.setdefault(s.task_id, []).append(s)
    lengths = {s.g.size for s in samples}
    if len(lengths) > 1:
        raise DimensionError("gradient samples differ in length",
                             *sorted((n,) for n in lengths))
    for task_id in grouped:
        grouped[task_id].sort(key=lambda s: s.batch_index)
    return grouped


def _check_batches(grouped: Mapping[str, List[GradientSample]]) -> int:
    counts = {len(v) for v in grouped.values()}
    if len(counts) != 1:
        raise ContractError("every task needs the same number of batches",
                            rule_name="equal_batches")
    count = counts.pop()
    if count < 2:
        raise ContractError("need at least two batches per task", rule_name="batches_per_task")
    return count


def grad_direction_matrix(samples: Sequence[GradientSample]) -> InterferenceMatrices:
    """GD[i, j] = mean over b of cos(g_j^b, g_i^b). GM is filled by ``grad_magnitude_matrix``."""
    grouped = group_by_task(samples)
    n_batches = _check_batches(grouped)
    task_ids = list(grouped)
    for task_id, items in grouped.items():
        for s in items:
            if s.norm == 0.0:
                raise NumericError(
                    f"zero gradient norm for task {task_id} batch {s.batch_index}",
                    {"task_id": task_id, "batch_index": s.batch_index},
                )

    t = len(task_ids)
    gd = np.ones((t, t))
    for i, ti in enumerate(task_ids):
        for j, tj in enumerate(task_ids):
            if i == j:
                continue
            total = 0.0
            for b in range(n_batches):
                gi, gj = grouped[ti][b], grouped[tj][b]
                total += float(np.dot(gj.g, gi.g)) / (gj.norm * gi.norm)
            gd[i, j] = min(1.0, max(-1.0, total / n_batches))
    return InterferenceMatrices(gd=gd, gm=np.ones((t, t)), task_ids=task_ids)


def grad_magnitude_matrix(samples: Sequence[GradientSample]) -> Matrix:
    """GM[i, j] = 2·m_i·m_j / (m_i² + m_j²) with m_i the mean gradient norm of task i."""
    grouped = group_by_task(samples)
    _check_batches(grouped)
    task_ids = list(grouped)
    means = []
    for task_id in task_ids:
        m = float(np.mean([s.norm for s in grouped[task_id]]))
        if m == 0.0:
            raise NumericError(f"zero mean gradient norm for task {task_id}",
                               {"task_id": task_id})
        means.append(m)

    t = len(task_ids)
    gm = np.ones((t, t))
    for i in range(t):
        for j in range(i + 1, t):
            mi, mj = means[i], means[j]
            value = 2.0 * mi * mj / (mi * mi + mj * mj)
            gm[i, j] = value
            gm[j, i] = value
    return gm


def interference_matrices(samples: Sequence[GradientSample]) -> InterferenceMatrices:
    direction = grad_direction_matrix(samples)
    return InterferenceMatrices(
        gd=direction.gd, gm=grad_magnitude_matrix(samples), task_ids=direction.task_ids
    )


def tug_of_war_indexes(gd: Matrix, gm: Matrix) -> np.ndarray:
    """index_i = Σ_j GD[i, j]·GM[i, j]."""
    if gd.shape != gm.shape or gd.ndim != 2 or gd.shape[0] != gd.shape[1]:
        raise DimensionError("GD and GM must be equal square matrices", gd.shape, gm.shape)
    return (gd * gm).sum(axis=1)


def max_normalize(v: Sequence[float]) -> np.ndarray:
    """Divide by the largest absolute entry."""
    arr = np.asarray(v, dtype=np.float64)
    peak = float(np.max(np.abs(arr))) if arr.size else 0.0
    if peak == 0.0:
        raise ContractError("cannot max-normalize an all-zero vector", rule_name="nonzero_max")
    return arr / peak


def mean_task_gradients(samples: Sequence[GradientSample]) -> Dict[str, np.ndarray]:
    """Mean gradient over the sampled batches of each task."""
    grouped = group_by_task(samples)
    return {
        task_id: np.mean(np.stack([s.g for s in items]), axis=0)
        for task_id, items in grouped.items()
    }


def statistics_scores(task_gradients: Sequence[np.ndarray]) -> np.ndarray:
    """
    Per scalar parameter: |Σ_i g_i| / Σ_i |g_i|.

    A parameter with no gradient from any task scores 1.
    """
    if not task_gradients:
        raise ContractError("need at least one task gradient", rule_name="nonempty")
    sizes = {np.asarray(g).size for g in task_gradients}
    if len(sizes) != 1:
        raise DimensionError("task gradients differ in length", *sorted((n,) for n in sizes))
    stacked = np.stack([np.asarray(g, dtype=np.float64).ravel() for g in task_gradients])
    numerator = np.abs(stacked.sum(axis=0))
    denominator = np.abs(stacked).sum(axis=0)
    scores = np.ones_like(numerator)
    nonzero = denominator > 0
    scores[nonzero] = numerator[nonzero] / denominator[nonzero]
    return np.clip(scores, 0.0, 1.0)


def histogram_ten_bins(scores: Sequence[float]) -> StatScoreHistogram:
    """Counts over [0,0.1), …, [0.8,0.9), [0.9,1.0]."""
    arr = np.asarray(scores, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ContractError("histogram needs at least one score", rule_name="nonempty")
    if np.any(arr < 0.0) or np.any(arr > 1.0) or not np.all(np.isfinite(arr)):
        raise ContractError("statistics scores must lie in [0, 1]", rule_name="score_range")
    bins = np.minimum((arr * N_BINS).astype(np.int64), N_BINS - 1)
    counts = np.bincount(bins, minlength=N_BINS)
    return StatScoreHistogram(counts=[int(c) for c in counts], total=int(arr.size))


@dataclass(frozen=True)
class InterferenceStudy:
    """Everything the diagnostics report needs, for one parameter snapshot."""

    matrices: InterferenceMatrices
    indexes: np.ndarray
    normalized_indexes: np.ndarray
    histogram: StatScoreHistogram
    sample_length: int
    batches_per_task: int

    @property
    def normalized_mean(self) -> float:
        return float(np.mean(self.normalized_indexes))

    @property
    def normalized_std(self) -> float:
        return float(np.std(self.normalized_indexes))


def analyze(samples: Sequence[GradientSample]) -> InterferenceStudy:
    """Run every diagnostic over one sample set."""
    matrices = interference_matrices(samples)
    indexes = tug_of_war_indexes(matrices.gd, matrices.gm)
    means = mean_task_gradients(samples)
    scores = statistics_scores([means[t] for t in matrices.task_ids])
    grouped = group_by_task(samples)
    return InterferenceStudy(
        matrices=matrices,
        indexes=indexes,
        normalized_indexes=max_normalize(indexes),
        histogram=histogram_ten_bins(scores),
        sample_length=int(samples[0].g.size),
        batches_per_task=len(next(iter(grouped.values()))),
    )
