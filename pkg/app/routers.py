"""
Routing networks mapping per-token scores (or token types) to expert weights.

Five router kinds are supported: constant, hard (token type → one expert),
sparse (top-K then softmax), soft-sigmoid (normalized sigmoids) and
soft-softmax (plain row softmax, the Connector-MoE default).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np

from .exceptions import ContractError, DimensionError, NumericError
from .numerics import MLP, Matrix, Module, Node, constant, ops


class RouterKind(str, Enum):
    CONSTANT = "constant"
    HARD = "hard"
    SPARSE = "sparse"
    SOFT_SIGMOID = "soft-sigmoid"
    SOFT_SOFTMAX = "soft-softmax"

    @property
    def needs_network(self) -> bool:
        return self in (RouterKind.SPARSE, RouterKind.SOFT_SIGMOID, RouterKind.SOFT_SOFTMAX)


@dataclass(frozen=True)
class RouterWeights:
    """tokens×N expert weights; rows sum to 1."""

    weights: Node
    kind: RouterKind

    @property
    def matrix(self) -> Matrix:
        return self.weights.value

    @property
    def n_experts(self) -> int:
        return self.weights.shape[1]

    @property
    def n_tokens(self) -> int:
        return self.weights.shape[0]


Scores = Union[Node, Matrix]


def _as_node(scores: Scores) -> Node:
    node = scores if isinstance(scores, Node) else constant(scores)
    if not np.all(np.isfinite(node.value)):
        raise NumericError("router scores contain non-finite entries")
    return node


def constant_route(tokens: int, n_experts: int) -> RouterWeights:
    """Every token gives every expert weight 1/N."""
    if n_experts < 1:
        raise ContractError("constant router needs at least one expert", rule_name="n_experts")
    return RouterWeights(
        constant(np.full((tokens, n_experts), 1.0 / n_experts)), RouterKind.CONSTANT
    )


def hard_route(token_types: Sequence[int], n_experts: int) -> RouterWeights:
    """Row t is one-hot at ``token_types[t]``."""
    types = np.asarray(token_types, dtype=np.int64)
    if n_experts < 1 or np.any(types < 0) or np.any(types >= n_experts):
        raise ContractError(
            f"token types must lie in [0, {n_experts})",
            rule_name="token_type_range",
            context={"token_types": types.tolist()},
        )
    weights = np.zeros((types.size, n_experts))
    weights[np.arange(types.size), types] = 1.0
    return RouterWeights(constant(weights), RouterKind.HARD)


def top_k_mask(scores: Matrix, k: int) -> np.ndarray:
    """Boolean mask of the k largest entries per row; ties go to the lower index."""
    # stable sort on -scores keeps the lower index first among equals
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    mask = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


def sparse_route(scores: Scores, k: int) -> RouterWeights:
    """Keep the top-k scores per row, set the rest to -inf, then softmax."""
    node = _as_node(scores)
    n = node.shape[1]
    if not 1 <= k <= n:
        raise ContractError(f"top-k must lie in [1, {n}], got {k}", rule_name="top_k_range")
    mask = top_k_mask(node.value, k)
    return RouterWeights(ops.masked_softmax_rows(node, mask), RouterKind.SPARSE)


def soft_route_sigmoid(scores: Scores) -> RouterWeights:
    """sigmoid(scores) / sum(sigmoid(scores)) per row."""
    node = _as_node(scores)
    if node.shape[1] < 1:
        raise ContractError("soft router needs at least one expert", rule_name="n_experts")
    return RouterWeights(ops.normalize_rows(ops.sigmoid(node)), RouterKind.SOFT_SIGMOID)


def soft_route_softmax(scores: Scores) -> RouterWeights:
    """Plain row softmax of the scores."""
    node = _as_node(scores)
    return RouterWeights(ops.softmax_rows(node), RouterKind.SOFT_SOFTMAX)


def moe_combine(expert_outputs: Sequence[Node], weights: RouterWeights) -> Node:
    """out[t] = Σ_k weights[t, k] · expert_outputs[k][t]."""
    if len(expert_outputs) != weights.n_experts:
        raise DimensionError(
            f"{len(expert_outputs)} expert outputs for {weights.n_experts} weight columns"
        )
    shape = expert_outputs[0].shape
    for out in expert_outputs:
        if out.shape != shape:
            raise DimensionError("expert outputs differ in shape", shape, out.shape)
    if weights.n_tokens != shape[0]:
        raise DimensionError("weights and expert outputs differ in token count",
                             weights.weights.shape, shape)

    total = None
    for k, out in enumerate(expert_outputs):
        term = ops.row_scale(out, ops.column(weights.weights, k))
        total = term if total is None else ops.add(total, term)
    assert total is not None
    return total


class RouterNet(Module):
    """
    The small scoring network g: a two-layer perceptron from the router input
    to N scores, hidden width max(4, d_in // 4), GELU.
    """

    def __init__(
        self,
        d_in: int,
        n_experts: int,
        kind: RouterKind,
        rng: np.random.Generator,
        top_k: int = 2,
    ) -> None:
        self.kind = kind
        self.n_experts = n_experts
        self.top_k = top_k
        self.score_net = MLP(d_in, max(4, d_in // 4), n_experts, rng, activation="gelu")

    @property
    def d_in(self) -> int:
        return self.score_net.fc1.d_in

    def scores(self, x: Node) -> Node:
        return self.score_net(x)

    def __call__(self, x: Node) -> RouterWeights:
        if x.shape[1] != self.d_in:
            raise DimensionError("router input width differs", x.shape, (x.shape[0], self.d_in))
        s = self.scores(x)
        if self.kind == RouterKind.SPARSE:
            return sparse_route(s, min(self.top_k, self.n_experts))
        if self.kind == RouterKind.SOFT_SIGMOID:
            return soft_route_sigmoid(s)
        if self.kind == RouterKind.SOFT_SOFTMAX:
            return soft_route_softmax(s)
        raise ContractError(
            f"router kind {self.kind.value} has no scoring network", rule_name="router_kind"
        )
