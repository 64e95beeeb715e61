"""Tests for the resampler, the Connector-MoE connector and its baselines."""

import numpy as np
import pytest

from app.connector import (
    AggregationMethod,
    CmoeConfig,
    Connector,
    ConnectorKind,
    ResamplerConfig,
    RoutingStrategy,
    resample,
    routing_summary,
)
from app.exceptions import ContractError, DimensionError
from app.numerics import backward, check_gradients, constant, make_rng, ops
from app.routers import RouterKind, constant_route, hard_route

TASKS = ["cls", "refer", "vqa"]


def _tokens(seed: int, n_v: int = 8, d_v: int = 4):
    return constant(make_rng(seed, "tokens").normal(size=(n_v, d_v)))


def _cmoe(rng, **kwargs):
    resampler = kwargs.pop("resampler", ResamplerConfig(alpha=2))
    use_task_tokens = kwargs.pop("use_task_tokens", True)
    cfg = CmoeConfig(d_out=6, **kwargs)
    return Connector(
        ConnectorKind.CMOE, 4, resampler, TASKS, rng, cmoe=cfg, d_out=6,
        use_task_tokens=use_task_tokens,
    )


class TestResampler:
    def test_projection_concatenates_then_projects(self, rng):
        connector = _cmoe(rng)
        f_v = _tokens(0)
        out = connector.resampler(f_v)
        assert out.shape == (4, 8)
        concatenated = f_v.value.reshape(4, 8)
        proj = connector.resampler.projection
        np.testing.assert_allclose(
            out.value, concatenated @ proj.weight.value + proj.bias.value, atol=1e-12
        )

    @pytest.mark.parametrize(
        "method,expected",
        [
            (AggregationMethod.AVG_POOL, [[2.0, 3.0]]),
            (AggregationMethod.MAX_POOL, [[3.0, 4.0]]),
        ],
    )
    def test_pooling(self, method, expected):
        f_v = constant([[1.0, 4.0], [3.0, 2.0]])
        out = resample(f_v, ResamplerConfig(alpha=2, method=method))
        np.testing.assert_allclose(out.value, expected)

    def test_none_is_identity(self):
        f_v = _tokens(1)
        assert resample(f_v, ResamplerConfig(method=AggregationMethod.NONE)) is f_v

    def test_none_requires_alpha_one(self):
        with pytest.raises(ContractError):
            ResamplerConfig(alpha=2, method=AggregationMethod.NONE)

    def test_alpha_must_divide_token_count(self):
        with pytest.raises(ContractError):
            resample(_tokens(2, n_v=6), ResamplerConfig(alpha=4, method=AggregationMethod.AVG_POOL))

    def test_output_width(self):
        assert ResamplerConfig(alpha=4).output_dim(16) == 64
        assert ResamplerConfig(alpha=4, method=AggregationMethod.MAX_POOL).output_dim(16) == 16


class TestConnectorMoE:
    @pytest.mark.parametrize("router", [RouterKind.CONSTANT, RouterKind.SOFT_SOFTMAX])
    def test_single_expert_equals_mlp_baseline(self, router):
        """With N = 1 every router weight is 1, so the mixture is the lone expert."""
        resampler = ResamplerConfig(method=AggregationMethod.NONE)
        cmoe = Connector(
            ConnectorKind.CMOE, 4, resampler, TASKS, make_rng(0, "a"),
            cmoe=CmoeConfig(n_experts=1, router_kind=router, d_out=6), d_out=6,
        )
        mlp = Connector(ConnectorKind.MLP, 4, resampler, TASKS, make_rng(0, "b"), d_out=6)
        expert = cmoe.experts[0]
        for name in ("fc1", "fc2"):
            for attr in ("weight", "bias"):
                src = getattr(getattr(expert, name), attr)
                getattr(getattr(mlp.projector, name), attr).value = src.value.copy()

        f_v = _tokens(3)
        out_moe, weights = cmoe(f_v, "refer")
        out_mlp, none = mlp(f_v, "refer")
        np.testing.assert_array_equal(out_moe.value, out_mlp.value)
        np.testing.assert_array_equal(weights.matrix, np.ones((8, 1)))
        assert none is None

    def test_router_weights_have_one_row_per_aggregated_token(self, rng):
        out, weights = _cmoe(rng)(_tokens(4), "vqa")
        assert out.shape == (4, 6)
        assert weights.matrix.shape == (4, 5)
        np.testing.assert_allclose(weights.matrix.sum(axis=1), 1.0)

    def test_task_strategy_routes_every_token_alike(self, rng):
        connector = _cmoe(rng, strategy=RoutingStrategy.TASK)
        _, weights = connector(_tokens(5), "cls")
        np.testing.assert_allclose(weights.matrix, np.tile(weights.matrix[:1], (4, 1)))

    def test_token_strategy_ignores_the_task(self, rng):
        connector = _cmoe(rng, strategy=RoutingStrategy.TOKEN, use_task_tokens=False)
        f_v = _tokens(6)
        a, _ = connector(f_v, "cls")
        b, _ = connector(f_v, "vqa")
        np.testing.assert_array_equal(a.value, b.value)
        assert connector.task_tokens is None

    def test_task_strategies_need_task_tokens(self, rng):
        with pytest.raises(ContractError, match="needs task tokens"):
            _cmoe(rng, strategy=RoutingStrategy.TOKEN_AND_TASK, use_task_tokens=False)

    def test_hard_router_uses_task_index_modulo_n(self, rng):
        connector = _cmoe(rng, router_kind=RouterKind.HARD, n_experts=2)
        _, first = connector(_tokens(7), "cls")
        _, third = connector(_tokens(7), "vqa")
        np.testing.assert_array_equal(first.matrix, np.tile([1.0, 0.0], (4, 1)))
        np.testing.assert_array_equal(third.matrix, np.tile([1.0, 0.0], (4, 1)))
        _, second = connector(_tokens(7), "refer")
        np.testing.assert_array_equal(second.matrix, np.tile([0.0, 1.0], (4, 1)))

    def test_unknown_task_is_rejected(self, rng):
        with pytest.raises(ContractError, match="unknown task"):
            _cmoe(rng)(_tokens(8), "ocr")

    def test_token_width_is_checked(self, rng):
        with pytest.raises(DimensionError):
            _cmoe(rng, resampler=ResamplerConfig(method=AggregationMethod.NONE))(
                _tokens(9, d_v=5), "cls"
            )

    @pytest.mark.parametrize("seed", range(20))
    @pytest.mark.parametrize(
        "router", [RouterKind.SOFT_SOFTMAX, RouterKind.SOFT_SIGMOID, RouterKind.SPARSE]
    )
    def test_gradients_reach_experts_router_and_task_tokens(self, router, seed):
        rng = make_rng(seed, "cmoe", router.value)
        connector = _cmoe(rng, router_kind=router, n_experts=3, top_k=2)
        f_v = _tokens(100 + seed)
        weights = constant(rng.normal(size=(4, 6)))

        def fn():
            out, _ = connector(f_v, "refer")
            return ops.sum_all(ops.mul(out, weights))

        params = connector.trainable_parameters()
        assert "task_tokens.tokens.refer" in params
        errors = check_gradients(fn, list(params.values()), floor=1e-3)
        assert max(errors.values()) < 1e-5

    def test_hard_router_leaves_unselected_experts_without_gradient(self, rng, weighted_sum):
        connector = _cmoe(rng, router_kind=RouterKind.HARD, n_experts=3)
        out, _ = connector(_tokens(13), "refer")
        connector.zero_grad()
        backward(weighted_sum(out))
        for k, expert in enumerate(connector.experts):
            grads = [p.grad for p in expert.trainable_parameters().values()]
            if k == TASKS.index("refer"):
                assert any(np.any(g != 0.0) for g in grads)
            else:
                assert all(np.all(g == 0.0) for g in grads), k

    def test_linear_baseline_output_width(self, rng):
        connector = Connector(ConnectorKind.LINEAR, 4, ResamplerConfig(alpha=2), TASKS, rng,
                              d_out=6)
        out, weights = connector(_tokens(12), "cls")
        assert out.shape == (4, 6)
        assert weights is None
        assert connector.d_out == 6


class TestRoutingSummary:
    def test_means_per_task(self):
        table = routing_summary(
            [
                ("cls", hard_route([0, 1], 2)),
                ("cls", hard_route([0, 0], 2)),
                ("vqa", constant_route(3, 2)),
            ]
        )
        assert table.task_ids == ["cls", "vqa"]
        np.testing.assert_allclose(table.row("cls"), [0.75, 0.25])
        np.testing.assert_allclose(table.row("vqa"), [0.5, 0.5])
        assert table.token_counts == [4, 3]

    def test_needs_records(self):
        with pytest.raises(ContractError):
            routing_summary([])

    def test_expert_counts_must_agree(self):
        with pytest.raises(DimensionError):
            routing_summary([("a", constant_route(1, 2)), ("b", constant_route(1, 3))])
