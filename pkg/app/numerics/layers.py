"""
Parameter containers built on the autodiff ops.

``Module`` discovers parameters by walking its attributes in definition
order: ``Node`` leaves, nested modules, and lists/dicts of modules. Names are
dotted paths (``experts.2.fc1.weight``) and are stable across runs, which the
checkpoint format and the interference study rely on.
"""

from __future__ import annotations

from typing import Dict, Iterator, Literal, Optional

import numpy as np

from . import ops
from .tensor import Node, parameter

Activation = Literal["gelu", "relu", "tanh"]


class Module:
    """Base class for anything that owns parameters."""

    def named_parameters(self, prefix: str = "") -> Dict[str, Node]:
        found: Dict[str, Node] = {}
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            for key, node in _walk(value, f"{prefix}{name}"):
                found[key] = node
        return found

    def trainable_parameters(self) -> Dict[str, Node]:
        return {k: v for k, v in self.named_parameters().items() if v.requires_grad}

    def parameter_count(self, trainable_only: bool = True) -> int:
        params = self.trainable_parameters() if trainable_only else self.named_parameters()
        return sum(p.value.size for p in params.values())

    def zero_grad(self) -> None:
        for node in self.named_parameters().values():
            node.zero_grad()


def _walk(value: object, path: str) -> Iterator[tuple[str, Node]]:
    if isinstance(value, Node):
        if value.name is None:
            value.name = path
        yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=f"{path}.").items()
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{path}.{i}")
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk(item, f"{path}.{key}")


def activate(x: Node, kind: Activation) -> Node:
    if kind == "gelu":
        return ops.gelu(x)
    if kind == "relu":
        return ops.relu(x)
    return ops.tanh(x)


class Linear(Module):
    """Affine map ``x @ W + b`` with W of shape d_in×d_out."""

    def __init__(
        self,
        d_in: int,
        d_out: int,
        rng: np.random.Generator,
        bias: bool = True,
        init_std: Optional[float] = None,
        trainable: bool = True,
    ) -> None:
        std = init_std if init_std is not None else 1.0 / np.sqrt(d_in)
        self.weight = parameter(rng.normal(0.0, std, size=(d_in, d_out)))
        self.weight.requires_grad = trainable
        self.bias: Optional[Node] = None
        if bias:
            self.bias = parameter(np.zeros((1, d_out)))
            self.bias.requires_grad = trainable

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Node) -> Node:
        out = ops.matmul(x, self.weight)
        if self.bias is not None:
            out = ops.add_bias(out, self.bias)
        return out


class MLP(Module):
    """Two-layer perceptron ``fc2(act(fc1(x)))``."""

    def __init__(
        self,
        d_in: int,
        d_hidden: int,
        d_out: int,
        rng: np.random.Generator,
        activation: Activation = "gelu",
        out_init_std: Optional[float] = None,
    ) -> None:
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng, init_std=out_init_std)
        self.activation = activation

    def __call__(self, x: Node) -> Node:
        return self.fc2(activate(self.fc1(x), self.activation))
