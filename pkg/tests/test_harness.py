"""Tests for the synthetic suite, toy model, training loop and evaluation."""

from itertools import islice

import numpy as np
import pytest

from app.checkpoint import state_dict
from app.connector import CmoeConfig, ConnectorKind, ResamplerConfig, RoutingStrategy
from app.exceptions import ContractError, TrainingAbortedError
from app.harness import (
    HeadKind,
    ModelConfig,
    TaskSpec,
    TaskTag,
    ToyMultiTaskModel,
    TrainConfig,
    WatchedScope,
    collect_routing,
    delta_metric,
    evaluate,
    make_task_suite,
    oracle_prediction,
    per_task_delta,
    proportional_sampler,
    train,
    watched_parameters,
)
from app.interference import analyze, collect_gradients
from app.numerics import check_gradients, lr_at, make_rng

SMALL_MODEL = ModelConfig(cmoe=CmoeConfig(n_experts=3, d_out=8), d_out=8, trunk_width=16,
                          trunk_blocks=1)


def _model(suite, cfg=SMALL_MODEL, seed=0):
    return ToyMultiTaskModel(suite, cfg, make_rng(seed, "model"))


class Oracle:
    def predict(self, batch):
        return oracle_prediction(batch)


class TestSampler:
    def test_frequencies_follow_volumes(self):
        draws = list(islice(proportional_sampler({"a": 1, "b": 3}, make_rng(0, "s")), 100_000))
        assert draws.count("b") / len(draws) == pytest.approx(0.75, abs=0.01)

    def test_zero_volume_task_is_never_drawn(self):
        draws = list(islice(proportional_sampler({"a": 0, "b": 2}, make_rng(1, "s")), 500))
        assert set(draws) == {"b"}

    @pytest.mark.parametrize("volumes", [{"a": 0, "b": 0}, {"a": -1, "b": 2}])
    def test_invalid_volumes_fail_on_creation(self, volumes):
        with pytest.raises(ContractError):
            proportional_sampler(volumes, make_rng(0, "s"))

    def test_suite_volumes(self, small_suite):
        assert small_suite.volumes["cls"] == 2
        assert small_suite.volumes["refer"] == 1


class TestSuite:
    def test_batch_shapes_per_head_kind(self, small_suite, small_geometry):
        g = small_geometry
        rng = make_rng(0, "batch")
        cls = small_suite.sample_batch("cls", rng, 3)
        assert cls.features.shape == (3 * g.n_visual_tokens, g.d_visual)
        np.testing.assert_array_equal(cls.targets.sum(axis=1), 1.0)
        assert cls.labels.shape == (3,)

        refer = small_suite.sample_batch("refer", rng, 3)
        np.testing.assert_allclose(refer.targets * 100.0, refer.boxes)
        assert np.all(refer.boxes >= 0.0) and np.all(refer.boxes <= 100.0)
        assert np.all(refer.boxes[:, 2] > refer.boxes[:, 0])

        vqa = small_suite.sample_batch("vqa", rng, 3)
        assert vqa.targets.shape == (3 * g.seq_len, g.vocab_size)
        assert vqa.labels.shape == (3, g.seq_len)
        assert vqa.batch_size == 3

    def test_tasks_share_inputs_for_equal_generators(self, small_suite):
        a = small_suite.sample_batch("cls", make_rng(5, "batch"), 4)
        b = small_suite.sample_batch("refer", make_rng(5, "batch"), 4)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.text, b.text)

    def test_opposite_conflict_angle_flips_binary_labels(self, small_suite):
        cls = small_suite.sample_batch("cls", make_rng(6, "batch"), 64)
        identify = small_suite.sample_batch("identify", make_rng(6, "batch"), 64)
        np.testing.assert_array_equal(identify.labels, 1 - cls.labels)

    def test_unknown_task_has_no_generator(self, small_suite):
        with pytest.raises(ContractError, match="no data generator"):
            small_suite.sample_batch("ocr", make_rng(0, "batch"), 2)

    def test_duplicate_task_ids(self, five_specs):
        with pytest.raises(ContractError, match="duplicate"):
            make_task_suite([*five_specs, five_specs[0]], make_rng(0, "suite"))

    def test_task_spec_validation(self):
        with pytest.raises(ContractError):
            TaskSpec("a", TaskTag.CLS, HeadKind.CLASSIFICATION, volume=0)


class TestModel:
    def test_outputs_per_head_kind(self, small_suite, small_geometry):
        model = _model(small_suite)
        rng = make_rng(1, "batch")
        out = model.forward(small_suite.sample_batch("refer", rng, 2))
        assert out.output.shape == (2, 4)
        assert np.all((out.output.value > 0.0) & (out.output.value < 1.0))
        assert out.routing.matrix.shape == (2 * small_geometry.n_visual_tokens, 3)

        tokens = model.predict(small_suite.sample_batch("caption", rng, 2))
        assert tokens.labels.shape == (2, small_geometry.seq_len)
        assert model.loss(small_suite.sample_batch("cls", rng, 2)).item() > 0.0

    def test_watched_scopes(self, small_suite):
        model = _model(small_suite)
        connector = watched_parameters(model, WatchedScope.CONNECTOR)
        everything = watched_parameters(model, WatchedScope.CONNECTOR_AND_HEAD)
        assert connector and all(k.startswith("connector.") for k in connector)
        assert set(connector) < set(everything)
        assert any(k.startswith("heads.") for k in everything)

    def test_text_only_tasks_bypass_the_connector(self, small_geometry):
        suite = make_task_suite(
            [
                TaskSpec("qa", TaskTag.QA, HeadKind.TOKEN_MATCH, visual=False),
                TaskSpec("vqa", TaskTag.VQA, HeadKind.TOKEN_MATCH),
            ],
            make_rng(0, "suite"),
            small_geometry,
        )
        model = _model(suite)
        assert model.connector.task_ids == ["vqa"]
        assert model.text_encoder is not None
        assert model.route(suite.sample_batch("qa", make_rng(0, "b"), 2)) is None
        assert model.route(suite.sample_batch("vqa", make_rng(0, "b"), 2)) is not None

    def test_suite_needs_a_visual_task(self, small_geometry):
        suite = make_task_suite(
            [TaskSpec("qa", TaskTag.QA, HeadKind.TOKEN_MATCH, visual=False)],
            make_rng(0, "suite"),
            small_geometry,
        )
        with pytest.raises(ContractError):
            _model(suite)

    def test_output_widths_must_agree(self):
        with pytest.raises(ContractError):
            ModelConfig(cmoe=CmoeConfig(d_out=16), d_out=8)

    def test_lora_trains_adapters_only(self, small_suite):
        cfg = ModelConfig(cmoe=CmoeConfig(n_experts=2, d_out=8), d_out=8, trunk_width=16,
                          trunk_blocks=1, lora_mode="lora", lora_rank=4)
        model = _model(small_suite, cfg)
        names = model.trainable_parameters()
        assert "trunk.0.expert.A" in names
        assert not any(n.endswith("W0") for n in names)
        frozen = model.trunk[0].W0.value.copy()
        train(model, small_suite, TrainConfig(total_iters=5, warmup_iters=1, batch_size=2))
        np.testing.assert_array_equal(model.trunk[0].W0.value, frozen)


class TestInterferenceAtInit:
    @pytest.fixture
    def pair_suite(self, small_geometry):
        def build(angle):
            return make_task_suite(
                [
                    TaskSpec("a", TaskTag.CLS, HeadKind.CLASSIFICATION),
                    TaskSpec("b", TaskTag.CLS, HeadKind.CLASSIFICATION, conflict_angle=angle),
                ],
                make_rng(0, "suite"),
                small_geometry,
            )

        return build

    @pytest.mark.parametrize(
        "cfg",
        [
            ModelConfig(connector=ConnectorKind.MLP, trunk_width=32),
            ModelConfig(
                cmoe=CmoeConfig(n_experts=3, strategy=RoutingStrategy.TOKEN, d_out=32),
                use_task_tokens=False,
                trunk_width=32,
            ),
        ],
        ids=["mlp", "cmoe-token"],
    )
    def test_identical_tasks_align_and_opposite_tasks_conflict(self, pair_suite, cfg):
        checks = [(0.0, lambda v: v > 0.999), (np.pi, lambda v: abs(v + 1.0) <= 0.05)]
        for angle, check in checks:
            suite = pair_suite(angle)
            model = _model(suite, cfg)
            samples = collect_gradients(
                model, suite, 100, watched_parameters(model, WatchedScope.CONNECTOR),
                make_rng(0, "diagnostics"),
            )
            assert len(samples) == 200
            gd = analyze(samples).matrices.gd
            assert check(gd[0, 1]), (angle, gd)

    def test_collection_needs_two_batches(self, small_suite):
        model = _model(small_suite)
        with pytest.raises(ContractError):
            collect_gradients(model, small_suite, 1,
                              watched_parameters(model, WatchedScope.CONNECTOR),
                              make_rng(0, "d"))

    def test_collection_needs_watched_parameters(self, small_suite):
        with pytest.raises(ContractError):
            collect_gradients(_model(small_suite), small_suite, 2, {}, make_rng(0, "d"))


class TestEndToEndGradients:
    """Finite differences of the task loss through resampler, CMoE, trunk and head."""

    CFG = ModelConfig(
        resampler=ResamplerConfig(alpha=2),
        cmoe=CmoeConfig(n_experts=2, d_out=8),
        d_out=8,
        trunk_width=16,
        trunk_blocks=1,
    )

    @pytest.mark.parametrize("seed", range(20))
    def test_connector_gradients_of_the_task_loss(self, small_suite, seed):
        model = _model(small_suite, self.CFG, seed)
        task_id = small_suite.visual_task_ids[seed % len(small_suite.visual_task_ids)]
        batch = small_suite.sample_batch(task_id, make_rng(seed, "batch"), 2)
        watched = watched_parameters(model, WatchedScope.CONNECTOR)
        assert "connector.resampler.projection.weight" in watched
        errors = check_gradients(lambda: model.loss(batch), list(watched.values()), floor=1e-3)
        assert max(errors.values()) < 1e-5


class TestTraining:
    CFG = TrainConfig(total_iters=12, warmup_iters=4, batch_size=2, seed=1, snapshot_iter=6)

    def test_log_follows_the_schedule(self, small_suite):
        result = train(_model(small_suite), small_suite, self.CFG)
        assert [e.iteration for e in result.log] == list(range(1, 13))
        for entry in result.log:
            assert entry.lr == lr_at(entry.iteration, self.CFG.schedule)
        assert result.log[-1].lr == pytest.approx(self.CFG.min_lr)
        assert result.warmup_state is not None and result.snapshot_state is not None
        assert result.final_loss == result.log[-1].loss

    def test_runs_are_deterministic(self, small_suite):
        first, second = _model(small_suite), _model(small_suite)
        log_a = train(first, small_suite, self.CFG).log
        log_b = train(second, small_suite, self.CFG).log
        assert log_a == log_b
        a, b = state_dict(first), state_dict(second)
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_zero_learning_rate_changes_nothing(self, small_suite):
        model = _model(small_suite)
        before = state_dict(model)
        cfg = TrainConfig(total_iters=5, warmup_iters=0, batch_size=2, peak_lr=0.0, min_lr=0.0)
        result = train(model, small_suite, cfg)
        after = state_dict(model)
        assert all(np.array_equal(before[k], after[k]) for k in before)
        assert all(np.array_equal(before[k], result.warmup_state[k]) for k in before)

    def test_non_finite_loss_aborts(self, small_suite):
        model = _model(small_suite)
        for head in model.heads.values():
            head.weight.value = np.full_like(head.weight.value, np.nan)
        with pytest.raises(TrainingAbortedError) as excinfo:
            train(model, small_suite, self.CFG)
        assert excinfo.value.iteration == 1

    def test_single_task_suite_learns_at_desk_defaults(self):
        suite = make_task_suite(
            [TaskSpec("cls", TaskTag.CLS, HeadKind.CLASSIFICATION)], make_rng(0, "suite")
        )
        model = ToyMultiTaskModel(suite, ModelConfig(), make_rng(0, "model"))
        log = train(model, suite, TrainConfig(total_iters=2000, warmup_iters=200)).log
        losses = np.array([e.loss for e in log])
        assert np.mean(losses[-200:]) < 0.1 * np.mean(losses[:20])

    def test_schedule_validation(self):
        with pytest.raises(ContractError):
            TrainConfig(total_iters=3, warmup_iters=4)


class TestEvaluation:
    def test_oracle_scores_perfectly(self, small_suite):
        table = evaluate(Oracle(), small_suite, seed=0, batches_per_task=3, batch_size=2)
        assert table.task_ids == small_suite.task_ids
        assert table.primary_scores() == pytest.approx([1.0] * 5)
        assert table.row("refer").values["r@0.5"] == pytest.approx(1.0)
        assert table.row("vqa").values["word-f1"] == pytest.approx(1.0)
        caption = table.row("caption").values
        assert caption["rouge-l"] == pytest.approx(1.0)
        assert caption["rouge-1"] == pytest.approx(1.0)
        assert table.row("cls").primary == "accuracy"
        assert table.row("refer").primary == "iou"
        assert table.row("caption").primary == "bleu-1"

    def test_evaluation_is_repeatable(self, small_suite):
        model = _model(small_suite)
        a = evaluate(model, small_suite, seed=3, batches_per_task=2, batch_size=2)
        b = evaluate(model, small_suite, seed=3, batches_per_task=2, batch_size=2)
        assert a == b

    def test_routing_table_for_connector_moe(self, small_suite):
        table = collect_routing(_model(small_suite), small_suite, seed=0, batches_per_task=2,
                                batch_size=2)
        assert table.task_ids == small_suite.visual_task_ids
        np.testing.assert_allclose(table.weights.sum(axis=1), 1.0)

    def test_baselines_have_no_routing(self, small_suite):
        model = _model(small_suite, ModelConfig(connector=ConnectorKind.MLP, trunk_width=16))
        assert collect_routing(model, small_suite, seed=0, batches_per_task=1) is None

    def test_delta_example(self):
        delta = delta_metric([77.90, 56.27], [79.81, 56.48])
        assert round(delta, 1) == -1.4

    def test_delta_against_itself_is_zero(self, small_suite):
        table = evaluate(Oracle(), small_suite, seed=0, batches_per_task=1, batch_size=2)
        assert per_task_delta(table, table) == {t: 0.0 for t in small_suite.task_ids}

    @pytest.mark.parametrize("model,baseline", [([1.0], [0.0]), ([1.0, 2.0], [1.0]), ([], [])])
    def test_delta_rejects_bad_inputs(self, model, baseline):
        with pytest.raises(ContractError):
            delta_metric(model, baseline)
