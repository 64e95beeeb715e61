"""Shared fixtures for the cmoe-lab test suite."""

import logging
from typing import Callable, Iterator, List

import numpy as np
import pytest

from app.config import config
from app.harness import HeadKind, SuiteGeometry, TaskSpec, TaskSuite, TaskTag, make_task_suite
from app.logging_config import RunContextFilter
from app.numerics import Node, constant, make_rng, ops

SMALL_GEOMETRY = SuiteGeometry(n_visual_tokens=4, d_visual=6, latent_dim=4, seq_len=2, vocab_size=4)


@pytest.fixture
def rng() -> np.random.Generator:
    return make_rng(1234, "tests")


@pytest.fixture
def weighted_sum(rng: np.random.Generator) -> Callable[[Node], Node]:
    """Scalar Σ w·x with fixed random weights per output shape, for gradient checks."""
    weights: dict = {}

    def _weighted_sum(out: Node) -> Node:
        if out.shape not in weights:
            weights[out.shape] = rng.normal(size=out.shape)
        return ops.sum_all(ops.mul(out, constant(weights[out.shape])))

    return _weighted_sum


@pytest.fixture(autouse=True)
def _isolated_output(monkeypatch: pytest.MonkeyPatch) -> None:
    # CMOE_LAB_OUT from the developer shell must not redirect test runs
    monkeypatch.setattr(config.output, "out_override", None)


@pytest.fixture
def five_specs() -> List[TaskSpec]:
    return [
        TaskSpec("cls", TaskTag.CLS, HeadKind.CLASSIFICATION, volume=2),
        TaskSpec("identify", TaskTag.IDENTIFY, HeadKind.CLASSIFICATION, conflict_angle=np.pi),
        TaskSpec("refer", TaskTag.REFER, HeadKind.BBOX_REGRESSION),
        TaskSpec("vqa", TaskTag.VQA, HeadKind.TOKEN_MATCH),
        TaskSpec("caption", TaskTag.CAPTION, HeadKind.TOKEN_MATCH),
    ]


@pytest.fixture
def small_suite(five_specs: List[TaskSpec]) -> TaskSuite:
    return make_task_suite(five_specs, make_rng(7, "suite"), SMALL_GEOMETRY)


@pytest.fixture
def small_geometry() -> SuiteGeometry:
    return SMALL_GEOMETRY


class _Collector(logging.Handler):
    def __init__(self, records: List[logging.LogRecord]) -> None:
        super().__init__(logging.DEBUG)
        self.records = records
        self.addFilter(RunContextFilter())

    def emit(self, record: logging.LogRecord) -> None:
        self.records.append(record)


@pytest.fixture
def app_log_records() -> Iterator[List[logging.LogRecord]]:
    """Records reaching the ``app`` logger, stamped like the configured handlers stamp them."""
    records: List[logging.LogRecord] = []
    handler = _Collector(records)
    logger = logging.getLogger("app")
    previous = logger.level
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG)
    yield records
    logger.removeHandler(handler)
    logger.setLevel(previous)
