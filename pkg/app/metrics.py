"""
Evaluation metrics and the bounding-box codec.

Text metrics work on token lists; strings are lowercased and split on
whitespace. Boxes live on a 100×100 relative grid.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

from .exceptions import ContractError

Tokens = Union[str, Sequence[str]]

GRID_SIZE = 100.0
_BOX_PATTERN = re.compile(r"^\{<(-?[\d.]+)><(-?[\d.]+)><(-?[\d.]+)><(-?[\d.]+)>\}$")


def tokenize(text: Tokens) -> List[str]:
    if isinstance(text, str):
        return text.lower().split()
    return [str(tok).lower() for tok in text]


def _ngrams(tokens: List[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# === BOUNDING BOXES ===


@dataclass(frozen=True)
class BBox:
    """Box on the 100×100 relative grid."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        coords = (self.xmin, self.ymin, self.xmax, self.ymax)
        if any(c < 0.0 or c > GRID_SIZE for c in coords):
            raise ContractError(f"box {coords} leaves the [0, 100] grid", rule_name="bbox_range")
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise ContractError(f"box {coords} has min > max", rule_name="bbox_order")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def to_xywh(self, img_w: float, img_h: float) -> Tuple[float, float, float, float]:
        sx, sy = img_w / GRID_SIZE, img_h / GRID_SIZE
        return (
            self.xmin * sx,
            self.ymin * sy,
            (self.xmax - self.xmin) * sx,
            (self.ymax - self.ymin) * sy,
        )

    def encode(self) -> str:
        """``{<xmin><ymin><xmax><ymax>}`` with coordinates rounded to integers."""
        parts = "".join(f"<{int(round(c))}>" for c in (self.xmin, self.ymin, self.xmax, self.ymax))
        return "{" + parts + "}"

    @classmethod
    def decode(cls, text: str) -> "BBox":
        match = _BOX_PATTERN.match(text.strip())
        if match is None:
            raise ContractError(f"not a box string: {text!r}", rule_name="bbox_format")
        return cls(*(float(g) for g in match.groups()))

    @classmethod
    def from_corners(cls, a: float, b: float, c: float, d: float) -> "BBox":
        """Order and clip four raw coordinates into a valid box."""
        x0, x1 = sorted((a, c))
        y0, y1 = sorted((b, d))
        clip = lambda v: min(max(v, 0.0), GRID_SIZE)  # noqa: E731
        return cls(clip(x0), clip(y0), clip(x1), clip(y1))


def bbox_from_xywh(x: float, y: float, w: float, h: float, img_w: float, img_h: float) -> BBox:
    """Convert an [x, y, w, h] pixel box to corners on the 100×100 grid."""
    if w < 0 or h < 0:
        raise ContractError("box width and height must be >= 0", rule_name="bbox_size")
    if x < 0 or y < 0 or x + w > img_w or y + h > img_h:
        raise ContractError(
            f"box {(x, y, w, h)} exceeds image {img_w}x{img_h}", rule_name="bbox_inside"
        )
    sx, sy = GRID_SIZE / img_w, GRID_SIZE / img_h
    return BBox(x * sx, y * sy, (x + w) * sx, (y + h) * sy)


def iou(p: BBox, g: BBox) -> float:
    ix = max(0.0, min(p.xmax, g.xmax) - max(p.xmin, g.xmin))
    iy = max(0.0, min(p.ymax, g.ymax) - max(p.ymin, g.ymin))
    inter = ix * iy
    union = p.area + g.area - inter
    if union <= 0.0 or inter <= 0.0:
        return 0.0
    return inter / union


def recall_at_05(ious: Sequence[float]) -> float:
    """Fraction of predictions with IoU >= 0.5."""
    if not ious:
        raise ContractError("R@0.5 needs at least one IoU", rule_name="nonempty")
    if any(v < 0.0 or v > 1.0 for v in ious):
        raise ContractError("IoU values must lie in [0, 1]", rule_name="iou_range")
    return sum(1 for v in ious if v >= 0.5) / len(ious)


# === TEXT METRICS ===


def word_f1(candidate: Tokens, reference: Tokens) -> float:
    cand, ref = tokenize(candidate), tokenize(reference)
    if not ref:
        raise ContractError("reference must not be empty", rule_name="nonempty_reference")
    if not cand:
        return 0.0
    common = sum((Counter(cand) & Counter(ref)).values())
    if common == 0:
        return 0.0
    precision = common / len(cand)
    recall = common / len(ref)
    return 2 * precision * recall / (precision + recall)


def bleu_n(candidate: Tokens, reference: Tokens, n: int) -> float:
    """Clipped n-gram precision of the candidate against the reference."""
    if n < 1:
        raise ContractError("n must be >= 1", rule_name="ngram_order")
    cand, ref = tokenize(candidate), tokenize(reference)
    cand_grams = _ngrams(cand, n)
    total = sum(cand_grams.values())
    if total == 0:
        return 0.0
    clipped = sum((cand_grams & _ngrams(ref, n)).values())
    return clipped / total


def rouge_n(candidate: Tokens, reference: Tokens, n: int) -> float:
    """Matched reference n-grams over all reference n-grams."""
    if n < 1:
        raise ContractError("n must be >= 1", rule_name="ngram_order")
    cand, ref = tokenize(candidate), tokenize(reference)
    if not ref:
        raise ContractError("reference must not be empty", rule_name="nonempty_reference")
    ref_grams = _ngrams(ref, n)
    total = sum(ref_grams.values())
    if total == 0:
        return 0.0
    return sum((ref_grams & _ngrams(cand, n)).values()) / total


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence by dynamic programming."""
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Tokens, reference: Tokens) -> float:
    """
    LCS F-measure with R = LCS/L_C, P = LCS/L_R and β = P/R.

    Returns 0 when the LCS is empty.
    """
    cand, ref = tokenize(candidate), tokenize(reference)
    if not ref:
        raise ContractError("reference must not be empty", rule_name="nonempty_reference")
    lcs = lcs_length(cand, ref)
    if lcs == 0 or not cand:
        return 0.0
    r_lcs = lcs / len(cand)
    p_lcs = lcs / len(ref)
    beta = p_lcs / r_lcs
    return (1 + beta**2) * r_lcs * p_lcs / (r_lcs + beta**2 * p_lcs)


def accuracy(pred_labels: Sequence[object], true_labels: Sequence[object]) -> float:
    if len(pred_labels) != len(true_labels):
        raise ContractError(
            f"{len(pred_labels)} predictions for {len(true_labels)} labels",
            rule_name="equal_lengths",
        )
    if not true_labels:
        raise ContractError("accuracy needs at least one label", rule_name="nonempty")
    return sum(1 for p, t in zip(pred_labels, true_labels) if p == t) / len(true_labels)
