"""
Per-task evaluation, routing summaries and the Δ performance gain.

Each task is scored with the metric of its head kind: accuracy for
classification, mean IoU for box regression, BLEU-1 over token words for
token matching. Tags add the secondary metrics the ablation tables report
(R@0.5 for [refer], word-F1 for [vqa]/[identify]/[qa], BLEU-4 and ROUGE for
[caption]).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence

import numpy as np

from ..connector import RoutingTable, routing_summary
from ..exceptions import ContractError
from ..metrics import (
    BBox,
    accuracy,
    bleu_n,
    iou,
    recall_at_05,
    rouge_l,
    rouge_n,
    word_f1,
)
from ..numerics import make_rng
from ..routers import RouterWeights
from .model import Prediction
from .tasks import HeadKind, SyntheticBatch, TaskSuite, TaskTag

PRIMARY_METRIC = {
    HeadKind.CLASSIFICATION: "accuracy",
    HeadKind.BBOX_REGRESSION: "iou",
    HeadKind.TOKEN_MATCH: "bleu-1",
}


class Predictor(Protocol):
    def predict(self, batch: SyntheticBatch) -> Prediction: ...


class Router(Protocol):
    def route(self, batch: SyntheticBatch) -> Optional[RouterWeights]: ...


@dataclass(frozen=True)
class TaskMetrics:
    task_id: str
    tag: TaskTag
    head_kind: HeadKind
    primary: str
    values: Dict[str, float] = field(default_factory=dict)

    @property
    def score(self) -> float:
        return self.values[self.primary]


@dataclass(frozen=True)
class MetricTable:
    rows: List[TaskMetrics]

    @property
    def task_ids(self) -> List[str]:
        return [r.task_id for r in self.rows]

    def primary_scores(self) -> List[float]:
        return [r.score for r in self.rows]

    def row(self, task_id: str) -> TaskMetrics:
        for r in self.rows:
            if r.task_id == task_id:
                return r
        raise ContractError(f"no metrics for task {task_id!r}", rule_name="known_task")


def words(tokens: Sequence[int]) -> List[str]:
    """Token ids rendered as words ``t<id>``."""
    return [f"t{int(t)}" for t in tokens]


def oracle_prediction(batch: SyntheticBatch) -> Prediction:
    """The prediction that reads the targets; an upper bound for every metric."""
    if batch.head_kind == HeadKind.BBOX_REGRESSION:
        return Prediction(batch.task_id, batch.head_kind, boxes=batch.boxes)
    return Prediction(batch.task_id, batch.head_kind, labels=batch.labels)


def _score_batch(
    tag: TaskTag, batch: SyntheticBatch, pred: Prediction, acc: Dict[str, List[float]]
) -> None:
    if batch.head_kind == HeadKind.CLASSIFICATION:
        assert pred.labels is not None and batch.labels is not None
        acc.setdefault("accuracy", []).extend(
            [accuracy([p], [t]) for p, t in zip(pred.labels.tolist(), batch.labels.tolist())]
        )
        return

    if batch.head_kind == HeadKind.BBOX_REGRESSION:
        assert pred.boxes is not None and batch.boxes is not None
        for p, t in zip(pred.boxes, batch.boxes):
            acc.setdefault("iou", []).append(
                iou(BBox.from_corners(*p.tolist()), BBox.from_corners(*t.tolist()))
            )
        return

    assert pred.labels is not None and batch.labels is not None
    for p, t in zip(pred.labels, batch.labels):
        cand, ref = words(p), words(t)
        acc.setdefault("bleu-1", []).append(bleu_n(cand, ref, 1))
        if tag in (TaskTag.VQA, TaskTag.IDENTIFY, TaskTag.QA):
            acc.setdefault("word-f1", []).append(word_f1(cand, ref))
        if tag == TaskTag.CAPTION:
            acc.setdefault("bleu-4", []).append(bleu_n(cand, ref, 4))
            acc.setdefault("rouge-1", []).append(rouge_n(cand, ref, 1))
            acc.setdefault("rouge-2", []).append(rouge_n(cand, ref, 2))
            acc.setdefault("rouge-l", []).append(rouge_l(cand, ref))


def evaluate(
    model: Predictor,
    suite: TaskSuite,
    seed: int,
    batches_per_task: int = 25,
    batch_size: int = 4,
) -> MetricTable:
    """One metric row per task, in suite order, over held-out batches."""
    if batches_per_task < 1:
        raise ContractError("need at least one evaluation batch", rule_name="eval_batches")
    rows: List[TaskMetrics] = []
    for task_id in suite.task_ids:
        spec = suite.spec(task_id)
        rng = make_rng(seed, "evaluation", task_id)
        acc: Dict[str, List[float]] = {}
        for _ in range(batches_per_task):
            batch = suite.sample_batch(task_id, rng, batch_size)
            _score_batch(spec.tag, batch, model.predict(batch), acc)
        values = {name: float(np.mean(v)) for name, v in acc.items()}
        if spec.head_kind == HeadKind.BBOX_REGRESSION and spec.tag == TaskTag.REFER:
            values["r@0.5"] = recall_at_05(acc["iou"])
        rows.append(TaskMetrics(task_id, spec.tag, spec.head_kind,
                                PRIMARY_METRIC[spec.head_kind], values))
    return MetricTable(rows)


def collect_routing(
    model: Router,
    suite: TaskSuite,
    seed: int,
    batches_per_task: int = 10,
    batch_size: int = 4,
) -> Optional[RoutingTable]:
    """Mean router weights per visual task, or ``None`` when nothing routes."""
    records = []
    for task_id in suite.visual_task_ids:
        rng = make_rng(seed, "routing", task_id)
        for _ in range(batches_per_task):
            weights = model.route(suite.sample_batch(task_id, rng, batch_size))
            if weights is None:
                return None
            records.append((task_id, weights))
    return routing_summary(records)


def delta_metric(model_metrics: Sequence[float], baseline_metrics: Sequence[float]) -> float:
    """Δ = mean over tasks of (M_m − M_b) / M_b, in percent."""
    if len(model_metrics) != len(baseline_metrics):
        raise ContractError(
            f"{len(model_metrics)} model metrics for {len(baseline_metrics)} baselines",
            rule_name="equal_lengths",
        )
    if not baseline_metrics:
        raise ContractError("Δ needs at least one metric", rule_name="nonempty")
    if any(b == 0 for b in baseline_metrics):
        raise ContractError("baseline metric is zero", rule_name="nonzero_baseline")
    gains = [(m - b) / b for m, b in zip(model_metrics, baseline_metrics)]
    return 100.0 * sum(gains) / len(gains)


def per_task_delta(model: MetricTable, baseline: MetricTable) -> Dict[str, float]:
    """Δ for each task on its primary metric."""
    if model.task_ids != baseline.task_ids:
        raise ContractError("metric tables cover different tasks", rule_name="same_tasks")
    return {
        r.task_id: delta_metric([r.score], [baseline.row(r.task_id).score])
        for r in model.rows
    }
