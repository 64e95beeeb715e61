"""
Differentiable operations on ``Node``.

Each function computes the forward value with numpy and records one backward
rule per parent. Shape checks raise ``DimensionError`` naming both shapes.
"""

from __future__ import annotations

import math
from typing import Literal, Optional, Sequence

import numpy as np

from ..exceptions import ContractError, DimensionError, NumericError
from .tensor import Matrix, Node, ensure_node

ElementwiseKind = Literal["add", "sub", "mul", "relu", "gelu", "sigmoid", "tanh"]
LossKind = Literal["mse", "cross-entropy"]
PoolMethod = Literal["max", "avg"]

# tanh approximation of GELU
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def _require_same_shape(op: str, a: Node, b: Node) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op} needs equal shapes", a.shape, b.shape)


def matmul(a: Node, b: Node) -> Node:
    """Matrix product ``a @ b``."""
    if a.shape[1] != b.shape[0]:
        raise DimensionError("matmul inner dimensions differ", a.shape, b.shape)
    av, bv = a.value, b.value
    return Node(
        av @ bv,
        parents=((a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)),
    )


def add(a: Node, b: Node) -> Node:
    _require_same_shape("add", a, b)
    return Node(a.value + b.value, parents=((a, lambda g: g), (b, lambda g: g)))


def sub(a: Node, b: Node) -> Node:
    _require_same_shape("sub", a, b)
    return Node(a.value - b.value, parents=((a, lambda g: g), (b, lambda g: -g)))


def mul(a: Node, b: Node) -> Node:
    _require_same_shape("mul", a, b)
    av, bv = a.value, b.value
    return Node(av * bv, parents=((a, lambda g: g * bv), (b, lambda g: g * av)))


def scale(a: Node, factor: float) -> Node:
    return Node(a.value * factor, parents=((a, lambda g: g * factor),))


def relu(a: Node) -> Node:
    mask = a.value > 0
    return Node(np.where(mask, a.value, 0.0), parents=((a, lambda g: g * mask),))


def gelu(a: Node) -> Node:
    x = a.value
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)
    local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * _GELU_C * (
        1.0 + 3.0 * _GELU_A * x**2
    )
    return Node(out, parents=((a, lambda g: g * local),))


def _sigmoid_values(x: Matrix) -> Matrix:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Node) -> Node:
    s = _sigmoid_values(a.value)
    return Node(s, parents=((a, lambda g: g * s * (1.0 - s)),))


def tanh(a: Node) -> Node:
    t = np.tanh(a.value)
    return Node(t, parents=((a, lambda g: g * (1.0 - t**2)),))


def elementwise(a: Node, kind: ElementwiseKind, b: Optional[Node] = None) -> Node:
    """Dispatch an elementwise op by name; binary kinds need ``b``."""
    binary = {"add": add, "sub": sub, "mul": mul}
    unary = {"relu": relu, "gelu": gelu, "sigmoid": sigmoid, "tanh": tanh}
    if kind in binary:
        if b is None:
            raise ContractError(f"{kind} needs two operands", rule_name="binary_op")
        return binary[kind](a, b)
    if kind in unary:
        return unary[kind](a)
    raise ContractError(f"unknown elementwise kind {kind!r}", rule_name="op_kind")


def _stable_softmax(x: Matrix, keep: Optional[np.ndarray] = None) -> Matrix:
    z = x if keep is None else np.where(keep, x, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_node(a: Node, y: Matrix) -> Node:
    def rule(g: Matrix) -> Matrix:
        return y * (g - (g * y).sum(axis=1, keepdims=True))

    return Node(y, parents=((a, rule),))


def softmax_rows(a: Node) -> Node:
    """Row-wise softmax with per-row max subtraction."""
    return _softmax_node(a, _stable_softmax(a.value))


def masked_softmax_rows(a: Node, keep: np.ndarray) -> Node:
    """
    Row softmax where entries with ``keep == False`` are set to -inf first.

    The mask is treated as a constant; every row must keep at least one entry.
    """
    if keep.shape != a.shape:
        raise DimensionError("mask shape differs from scores", keep.shape, a.shape)
    if not np.all(keep.any(axis=1)):
        raise ContractError("every row must keep an entry", rule_name="mask_rows")
    return _softmax_node(a, _stable_softmax(a.value, keep))


def normalize_rows(a: Node) -> Node:
    """Divide each row by its sum; sums must be strictly positive."""
    s = a.value.sum(axis=1, keepdims=True)
    if np.any(s <= 0):
        raise NumericError("row sums must be positive to normalize")
    y = a.value / s

    def rule(g: Matrix) -> Matrix:
        return (g - (g * y).sum(axis=1, keepdims=True)) / s

    return Node(y, parents=((a, rule),))


def add_bias(x: Node, bias: Node) -> Node:
    """Add a 1×D bias row to every row of a T×D node."""
    if bias.shape[0] != 1 or bias.shape[1] != x.shape[1]:
        raise DimensionError("bias must be one row of matching width", x.shape, bias.shape)
    return Node(
        x.value + bias.value,
        parents=((x, lambda g: g), (bias, lambda g: g.sum(axis=0, keepdims=True))),
    )


def reshape(a: Node, rows: int, cols: int) -> Node:
    """Row-major reshape; (N, D) -> (N/k, D*k) concatenates k adjacent rows."""
    if rows * cols != a.value.size:
        raise DimensionError("reshape must keep the element count", a.shape, (rows, cols))
    shape = a.shape
    return Node(
        a.value.reshape(rows, cols),
        parents=((a, lambda g: g.reshape(shape)),),
    )


def pool_rows(a: Node, group: int, method: PoolMethod) -> Node:
    """Pool every ``group`` consecutive rows into one row (elementwise max or mean)."""
    n, d = a.shape
    if group < 1 or n % group != 0:
        raise ContractError(
            f"row count {n} is not divisible by pool size {group}",
            rule_name="pool_divisible",
        )
    blocks = a.value.reshape(n // group, group, d)
    if method == "avg":
        return Node(
            blocks.mean(axis=1),
            parents=((a, lambda g: np.repeat(g / group, group, axis=0)),),
        )
    if method == "max":
        winners = blocks.argmax(axis=1)  # first index on ties

        def rule(g: Matrix) -> Matrix:
            out = np.zeros((n // group, group, d))
            np.put_along_axis(out, winners[:, None, :], g[:, None, :], axis=1)
            return out.reshape(n, d)

        return Node(blocks.max(axis=1), parents=((a, rule),))
    raise ContractError(f"unknown pool method {method!r}", rule_name="pool_method")


def repeat_rows(a: Node, times: int) -> Node:
    """Stack a 1×D node ``times`` times into a times×D node."""
    if a.shape[0] != 1:
        raise DimensionError("repeat_rows needs a single row", a.shape)
    return Node(
        np.repeat(a.value, times, axis=0),
        parents=((a, lambda g: g.sum(axis=0, keepdims=True)),),
    )


def concat_cols(parts: Sequence[Node]) -> Node:
    """Concatenate nodes with equal row counts side by side."""
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise DimensionError("concat_cols needs equal row counts", *(p.shape for p in parts))
    edges = np.cumsum([0] + [p.shape[1] for p in parts])
    parents = []
    for part, start, stop in zip(parts, edges[:-1], edges[1:]):
        parents.append((part, lambda g, s=start, e=stop: g[:, s:e]))
    return Node(np.concatenate([p.value for p in parts], axis=1), parents=parents)


def concat_rows(parts: Sequence[Node]) -> Node:
    """Stack nodes with equal column counts on top of each other."""
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise DimensionError("concat_rows needs equal column counts", *(p.shape for p in parts))
    edges = np.cumsum([0] + [p.shape[0] for p in parts])
    parents = []
    for part, start, stop in zip(parts, edges[:-1], edges[1:]):
        parents.append((part, lambda g, s=start, e=stop: g[s:e, :]))
    return Node(np.concatenate([p.value for p in parts], axis=0), parents=parents)


def column(a: Node, k: int) -> Node:
    """Column ``k`` of a node as a T×1 node."""
    n, d = a.shape

    def rule(g: Matrix) -> Matrix:
        out = np.zeros((n, d))
        out[:, k : k + 1] = g
        return out

    return Node(a.value[:, k : k + 1], parents=((a, rule),))


def row_scale(x: Node, s: Node) -> Node:
    """Multiply row t of ``x`` by the scalar ``s[t, 0]``."""
    if s.shape != (x.shape[0], 1):
        raise DimensionError("row_scale needs one scale per row", x.shape, s.shape)
    xv, sv = x.value, s.value
    return Node(
        xv * sv,
        parents=(
            (x, lambda g: g * sv),
            (s, lambda g: (g * xv).sum(axis=1, keepdims=True)),
        ),
    )


def sum_all(a: Node) -> Node:
    shape = a.shape
    return Node(
        np.array([[a.value.sum()]]),
        parents=((a, lambda g: np.full(shape, g[0, 0])),),
    )


def mean_all(a: Node) -> Node:
    return scale(sum_all(a), 1.0 / a.value.size)


def mse_loss(pred: Node, target: Matrix) -> Node:
    """Mean squared error over all entries."""
    target_node = ensure_node(target)
    _require_same_shape("mse", pred, target_node)
    diff = sub(pred, target_node)
    return mean_all(mul(diff, diff))


def _check_one_hot(target: Matrix) -> None:
    ones = np.isclose(target, 1.0)
    zeros = target == 0.0
    if not np.all(ones | zeros) or not np.all(ones.sum(axis=1) == 1):
        raise ContractError(
            "cross-entropy targets must be one-hot rows", rule_name="one_hot_target"
        )


def cross_entropy_loss(logits: Node, target: Matrix) -> Node:
    """Mean over rows of -log softmax(logits)[true class], via log-sum-exp."""
    if logits.shape != target.shape:
        raise DimensionError("cross-entropy needs equal shapes", logits.shape, target.shape)
    _check_one_hot(target)
    x = logits.value
    shifted = x - x.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = x.shape[0]
    loss = -(log_probs * target).sum() / rows
    probs = np.exp(log_probs)

    return Node(
        np.array([[loss]]),
        parents=((logits, lambda g: g[0, 0] * (probs - target) / rows),),
    )


def loss(pred: Node, target: Matrix, kind: LossKind) -> Node:
    """Scalar training loss of the requested kind."""
    if kind == "mse":
        return mse_loss(pred, target)
    if kind == "cross-entropy":
        return cross_entropy_loss(pred, target)
    raise ContractError(f"unknown loss kind {kind!r}", rule_name="loss_kind")
