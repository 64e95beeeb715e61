"""Tests for the gradient-interference diagnostics on constructed gradients."""

import numpy as np
import pytest

from app.exceptions import ContractError, DimensionError, NumericError
from app.interference import (
    GradientSample,
    analyze,
    grad_direction_matrix,
    grad_magnitude_matrix,
    histogram_ten_bins,
    max_normalize,
    mean_task_gradients,
    statistics_scores,
    tug_of_war_indexes,
)


def _samples(per_task):
    """{task: [g_batch0, g_batch1, ...]} → GradientSample list."""
    return [
        GradientSample(task_id, b, np.asarray(g, dtype=np.float64))
        for task_id, grads in per_task.items()
        for b, g in enumerate(grads)
    ]


class TestGradDirection:
    def test_aligned_opposite_and_orthogonal_tasks(self):
        samples = _samples(
            {
                "a": [[1.0, 0.0], [2.0, 0.0]],
                "same": [[3.0, 0.0], [0.5, 0.0]],
                "opposite": [[-1.0, 0.0], [-4.0, 0.0]],
                "orthogonal": [[0.0, 1.0], [0.0, 2.0]],
            }
        )
        gd = grad_direction_matrix(samples).gd
        np.testing.assert_allclose(gd[0], [1.0, 1.0, -1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(np.diag(gd), 1.0)
        np.testing.assert_allclose(gd, gd.T, atol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_constructed_scenarios_over_a_hundred_batches(self, seed):
        rng = np.random.default_rng(seed)
        base = rng.normal(size=(100, 8))
        # rotate coordinate pairs by 90 degrees: orthogonal to every base batch
        turned = np.empty_like(base)
        turned[:, 0::2], turned[:, 1::2] = -base[:, 1::2], base[:, 0::2]
        noise = rng.normal(scale=0.01, size=base.shape)
        samples = _samples(
            {
                "a": base,
                "same": 2.0 * base + noise,
                "opposite": -0.5 * base + noise,
                "orthogonal": turned,
            }
        )
        gd = grad_direction_matrix(samples).gd
        assert gd[0, 1] == pytest.approx(1.0, abs=0.05)
        assert gd[0, 2] == pytest.approx(-1.0, abs=0.05)
        assert gd[0, 3] == pytest.approx(0.0, abs=0.05)

    def test_direction_ignores_scale_but_magnitude_does_not(self):
        rng = np.random.default_rng(11)
        a, b = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
        before = _samples({"a": a, "b": b})
        after = _samples({"a": a, "b": 7.0 * b})
        np.testing.assert_allclose(
            grad_direction_matrix(after).gd, grad_direction_matrix(before).gd, atol=1e-12
        )
        assert grad_magnitude_matrix(after)[0, 1] < grad_magnitude_matrix(before)[0, 1]
        np.testing.assert_allclose(
            grad_magnitude_matrix(_samples({"a": 3.0 * a, "b": 3.0 * b})),
            grad_magnitude_matrix(before),
            rtol=1e-12,
        )

    def test_paired_batches_are_compared(self):
        # batch 0 agrees, batch 1 disagrees
        samples = _samples({"a": [[1.0, 0.0], [1.0, 0.0]], "b": [[1.0, 0.0], [-1.0, 0.0]]})
        assert grad_direction_matrix(samples).gd[0, 1] == pytest.approx(0.0)

    def test_entries_are_clipped_to_unit_interval(self):
        g = [1e8, 1e-8, 3.0]
        gd = grad_direction_matrix(_samples({"a": [g, g], "b": [g, g]})).gd
        assert np.all(gd <= 1.0) and np.all(gd >= -1.0)

    def test_zero_norm_names_task_and_batch(self):
        samples = _samples({"a": [[1.0, 0.0], [1.0, 1.0]], "b": [[1.0, 0.0], [0.0, 0.0]]})
        with pytest.raises(NumericError, match="task b batch 1"):
            grad_direction_matrix(samples)

    def test_needs_two_batches(self):
        with pytest.raises(ContractError):
            grad_direction_matrix(_samples({"a": [[1.0]], "b": [[1.0]]}))

    def test_needs_equal_batch_counts(self):
        with pytest.raises(ContractError):
            grad_direction_matrix(_samples({"a": [[1.0], [1.0]], "b": [[1.0], [1.0], [1.0]]}))

    def test_needs_equal_sample_lengths(self):
        with pytest.raises(DimensionError):
            grad_direction_matrix(_samples({"a": [[1.0], [1.0]], "b": [[1.0, 0.0], [1.0, 0.0]]}))

    def test_non_finite_gradient_is_rejected(self):
        with pytest.raises(NumericError):
            GradientSample("a", 0, np.array([np.nan, 1.0]))


class TestGradMagnitude:
    def test_two_to_one_norm_ratio(self):
        samples = _samples({"a": [[1.0, 0.0], [0.0, 1.0]], "b": [[2.0, 0.0], [0.0, -2.0]]})
        gm = grad_magnitude_matrix(samples)
        np.testing.assert_allclose(gm, [[1.0, 0.8], [0.8, 1.0]])

    def test_equal_norms_score_one(self):
        samples = _samples({"a": [[3.0, 4.0], [5.0, 0.0]], "b": [[0.0, 5.0], [-5.0, 0.0]]})
        np.testing.assert_allclose(grad_magnitude_matrix(samples), np.ones((2, 2)))

    def test_values_lie_in_unit_interval(self):
        rng = np.random.default_rng(0)
        samples = _samples({t: rng.normal(scale=s, size=(3, 5)) for t, s in
                            [("a", 0.1), ("b", 1.0), ("c", 30.0)]})
        gm = grad_magnitude_matrix(samples)
        assert np.all(gm > 0.0) and np.all(gm <= 1.0)
        np.testing.assert_allclose(gm, gm.T)


class TestIndexes:
    def test_tug_of_war_is_row_sum_of_products(self):
        gd = np.array([[1.0, -1.0], [-1.0, 1.0]])
        gm = np.array([[1.0, 0.8], [0.8, 1.0]])
        np.testing.assert_allclose(tug_of_war_indexes(gd, gm), [0.2, 0.2])

    def test_shapes_must_match(self):
        with pytest.raises(DimensionError):
            tug_of_war_indexes(np.ones((2, 2)), np.ones((3, 3)))

    def test_max_normalize(self):
        np.testing.assert_allclose(max_normalize([2.0, -4.0, 1.0]), [0.5, -1.0, 0.25])

    def test_max_normalize_rejects_all_zero(self):
        with pytest.raises(ContractError):
            max_normalize([0.0, 0.0])


class TestStatisticsScores:
    def test_agreeing_cancelling_and_half(self):
        scores = statistics_scores([np.array([1.0, 1.0, 3.0]), np.array([1.0, -1.0, -1.0])])
        np.testing.assert_allclose(scores, [1.0, 0.0, 0.5])

    def test_untouched_parameter_scores_one(self):
        scores = statistics_scores([np.array([0.0, 2.0]), np.array([0.0, 1.0])])
        np.testing.assert_allclose(scores, [1.0, 1.0])

    def test_single_task_scores_one_everywhere(self):
        np.testing.assert_allclose(statistics_scores([np.array([-1.0, 2.0, 0.0])]), 1.0)

    def test_lengths_must_agree(self):
        with pytest.raises(DimensionError):
            statistics_scores([np.zeros(2), np.zeros(3)])

    def test_mean_task_gradients(self):
        means = mean_task_gradients(_samples({"a": [[1.0, 3.0], [3.0, 5.0]]}))
        np.testing.assert_allclose(means["a"], [2.0, 4.0])


class TestHistogram:
    def test_bins_are_half_open_except_the_last(self):
        hist = histogram_ten_bins([0.0, 0.05, 0.1, 0.85, 0.95, 1.0])
        assert hist.counts == [2, 1, 0, 0, 0, 0, 0, 0, 1, 2]
        assert hist.total == 6
        assert sum(hist.proportions) == pytest.approx(1.0)
        assert hist.mass_between(0.8, 1.0) == pytest.approx(0.5)
        assert hist.edges[0] == 0.0 and hist.edges[-1] == 1.0 and len(hist.edges) == 11

    @pytest.mark.parametrize("scores", [[], [1.5], [-0.1], [np.nan]])
    def test_rejects_bad_input(self, scores):
        with pytest.raises(ContractError):
            histogram_ten_bins(scores)


class TestAnalyze:
    def test_full_study(self):
        samples = _samples(
            {
                "a": [[1.0, 0.0, 1.0], [1.0, 0.0, 1.0]],
                "b": [[1.0, 0.0, -1.0], [1.0, 0.0, -1.0]],
                "c": [[0.0, 2.0, 0.0], [0.0, 2.0, 0.0]],
            }
        )
        study = analyze(samples)
        assert study.matrices.task_ids == ["a", "b", "c"]
        assert study.sample_length == 3
        assert study.batches_per_task == 2
        np.testing.assert_allclose(study.matrices.gd[0], [1.0, 0.0, 0.0], atol=1e-12)
        assert np.max(np.abs(study.normalized_indexes)) == pytest.approx(1.0)
        assert study.histogram.total == 3
        assert study.normalized_std >= 0.0
