"""
Matrix values and the reverse-mode autodiff graph.

A ``Matrix`` is a 2-D float64 numpy array. A ``Node`` wraps a matrix together
with the parents it was computed from and, for each parent, the rule that
maps the node's output gradient to that parent's gradient contribution.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np
import numpy.typing as npt

from ..exceptions import ContractError, NumericError

Matrix = npt.NDArray[np.float64]
BackwardRule = Callable[[Matrix], Matrix]


def as_matrix(values: object, name: str = "matrix") -> Matrix:
    """Coerce ``values`` to a finite 2-D float64 array."""
    array = np.array(values, dtype=np.float64)
    if array.ndim == 0:
        array = array.reshape(1, 1)
    elif array.ndim == 1:
        array = array.reshape(1, -1)
    elif array.ndim != 2:
        raise ContractError(
            f"{name} must be 2-D, got {array.ndim}-D",
            rule_name="matrix_rank",
            context={"shape": list(array.shape)},
        )
    if not np.all(np.isfinite(array)):
        raise NumericError(f"{name} contains non-finite entries")
    return array


class Node:
    """
    Handle in the autodiff graph.

    ``grad`` is allocated lazily as zeros of the value's shape. ``visits``
    counts how often this node's backward rules have been applied, which is
    exactly once per ``backward`` call that reaches it.
    """

    __slots__ = ("value", "_grad", "parents", "requires_grad", "name", "visits")

    def __init__(
        self,
        value: Matrix,
        parents: Iterable[tuple["Node", BackwardRule]] = (),
        requires_grad: bool = False,
        name: Optional[str] = None,
    ) -> None:
        self.value = value
        self.parents = tuple(parents)
        self.requires_grad = requires_grad or any(
            parent.requires_grad for parent, _ in self.parents
        )
        self.name = name
        self._grad: Optional[Matrix] = None
        self.visits = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]

    @property
    def grad(self) -> Matrix:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, value: Matrix) -> None:
        self._grad = value

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(
                "item() needs a 1x1 node",
                rule_name="scalar_node",
                context={"shape": list(self.shape)},
            )
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"<Node{label} shape={self.shape} requires_grad={self.requires_grad}>"


def constant(values: object, name: Optional[str] = None) -> Node:
    """Wrap values as a node that never receives gradient."""
    return Node(as_matrix(values, name or "constant"), name=name)


def parameter(values: object, name: Optional[str] = None) -> Node:
    """Wrap values as a trainable leaf node."""
    return Node(as_matrix(values, name or "parameter"), requires_grad=True, name=name)


def ensure_node(value: "Node | Matrix | object") -> Node:
    return value if isinstance(value, Node) else constant(value)


def topological_order(root: Node) -> list[Node]:
    """Parents-before-children order of every node reachable from ``root``."""
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root: Node) -> None:
    """
    Accumulate d(root)/d(node) into ``grad`` of every reachable requires-grad node.

    Gradients of one call are summed locally and then added to the stored
    ``grad``, so repeated calls without zeroing accumulate.
    """
    if root.value.shape != (1, 1):
        raise ContractError(
            f"backward() needs a scalar root, got shape {root.shape}",
            rule_name="scalar_root",
        )
    if not root.requires_grad:
        return

    local: dict[int, Matrix] = {id(root): np.ones((1, 1))}
    for node in reversed(topological_order(root)):
        upstream = local.get(id(node))
        if upstream is None:
            continue
        node.visits += 1
        for parent, rule in node.parents:
            if not parent.requires_grad:
                continue
            contribution = rule(upstream)
            key = id(parent)
            if key in local:
                local[key] = local[key] + contribution
            else:
                local[key] = contribution
        node.grad = node.grad + upstream
