"""Tests for the box codec and the evaluation metrics."""

from itertools import combinations

import numpy as np
import pytest

from app.exceptions import ContractError
from app.metrics import (
    BBox,
    accuracy,
    bbox_from_xywh,
    bleu_n,
    iou,
    lcs_length,
    recall_at_05,
    rouge_l,
    rouge_n,
    word_f1,
)


def _brute_force_lcs(a, b):
    for size in range(min(len(a), len(b)), 0, -1):
        subsequences = {tuple(a[i] for i in idx) for idx in combinations(range(len(a)), size)}
        for idx in combinations(range(len(b)), size):
            if tuple(b[i] for i in idx) in subsequences:
                return size
    return 0


class TestBoxes:
    def test_encode_rounds_to_integers(self):
        assert BBox(10.2, 20.0, 30.6, 40.0).encode() == "{<10><20><31><40>}"

    def test_decode(self):
        assert BBox.decode("{<10><20><30><40>}") == BBox(10.0, 20.0, 30.0, 40.0)

    @pytest.mark.parametrize("text", ["<10><20><30><40>", "{<10><20><30>}", "{<a><b><c><d>}"])
    def test_decode_rejects_malformed_strings(self, text):
        with pytest.raises(ContractError):
            BBox.decode(text)

    @pytest.mark.parametrize("coords", [(-1, 0, 10, 10), (0, 0, 101, 10), (20, 0, 10, 10)])
    def test_invalid_boxes(self, coords):
        with pytest.raises(ContractError):
            BBox(*coords)

    def test_from_pixel_box(self):
        box = bbox_from_xywh(10, 20, 30, 40, img_w=200, img_h=100)
        assert box == BBox(5.0, 20.0, 20.0, 60.0)
        assert box.to_xywh(200, 100) == pytest.approx((10, 20, 30, 40))

    def test_pixel_box_must_fit_the_image(self):
        with pytest.raises(ContractError):
            bbox_from_xywh(180, 0, 30, 10, img_w=200, img_h=100)

    def test_from_corners_orders_and_clips(self):
        assert BBox.from_corners(30, 40, -5, 120) == BBox(0.0, 40.0, 30.0, 100.0)


class TestIoU:
    @pytest.mark.parametrize(
        "p,g,expected",
        [
            ((0, 0, 10, 10), (0, 0, 10, 10), 1.0),
            ((0, 0, 10, 10), (20, 20, 30, 30), 0.0),
            ((0, 0, 10, 10), (5, 0, 15, 10), 1.0 / 3.0),
            ((0, 0, 10, 10), (10, 0, 20, 10), 0.0),
            ((0, 0, 20, 20), (5, 5, 15, 15), 0.25),
        ],
    )
    def test_examples(self, p, g, expected):
        assert iou(BBox(*p), BBox(*g)) == pytest.approx(expected)

    def test_degenerate_boxes_score_zero(self):
        assert iou(BBox(5, 5, 5, 5), BBox(5, 5, 5, 5)) == 0.0

    def test_recall_at_half(self):
        assert recall_at_05([0.4, 0.5, 0.9]) == pytest.approx(2.0 / 3.0)

    def test_recall_needs_ious(self):
        with pytest.raises(ContractError):
            recall_at_05([])


class TestTextMetrics:
    def test_word_f1(self):
        assert word_f1("a b c", "a b d") == pytest.approx(2.0 / 3.0)
        assert word_f1("", "a") == 0.0
        assert word_f1("A B", "a b") == pytest.approx(1.0)

    def test_bleu_is_clipped_precision(self):
        assert bleu_n("the the the", "the cat", 1) == pytest.approx(1.0 / 3.0)
        assert bleu_n("the cat", "the cat sat", 2) == pytest.approx(1.0)
        assert bleu_n("cat", "the cat", 2) == 0.0

    def test_rouge_n_is_reference_recall(self):
        assert rouge_n("the cat", "the cat sat", 1) == pytest.approx(2.0 / 3.0)
        assert rouge_n("the cat sat", "the cat sat", 2) == pytest.approx(1.0)

    def test_rouge_l_formula(self):
        cand, ref = "a b c d", "a c d"
        r, p = 3 / 4, 3 / 3
        beta = p / r
        expected = (1 + beta**2) * r * p / (r + beta**2 * p)
        assert rouge_l(cand, ref) == pytest.approx(expected)
        assert rouge_l("x y", "a b") == 0.0
        assert rouge_l("a b c", "a b c") == pytest.approx(1.0)

    @pytest.mark.parametrize("fn", [word_f1, rouge_l, lambda c, r: rouge_n(c, r, 1)])
    def test_empty_reference_is_rejected(self, fn):
        with pytest.raises(ContractError):
            fn("a", "")

    @pytest.mark.parametrize("seed", range(10))
    def test_lcs_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        a = [str(t) for t in rng.integers(0, 3, size=rng.integers(0, 7))]
        b = [str(t) for t in rng.integers(0, 3, size=rng.integers(0, 7))]
        assert lcs_length(a, b) == _brute_force_lcs(a, b)

    def test_accuracy(self):
        assert accuracy([1, 0, 1, 1], [1, 1, 1, 0]) == pytest.approx(0.5)
        with pytest.raises(ContractError):
            accuracy([1], [1, 0])
