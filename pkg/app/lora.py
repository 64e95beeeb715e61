"""
LoRA and LoRA-MoE adapters around a frozen linear map.

    h = x·W0 + (α/r) · Σ_k R(x)_k · (x·A_k)·B_k

A_k starts Gaussian, B_k starts at zero, so a fresh adapter reproduces the
frozen layer exactly. The LoRA-MoE router is a sparse top-K router over the
token alone.
"""

from __future__ import annotations

from typing import Dict, List, Optional

import numpy as np

from .exceptions import ContractError, DimensionError
from .numerics import Linear, Matrix, Module, Node, constant, ops, parameter
from .routers import RouterKind, RouterNet, moe_combine

LORA_INIT_STD = 0.02


class LoraExpert(Module):
    """One low-rank pair A (d_in×r), B (r×d_out)."""

    def __init__(
        self,
        d_in: int,
        d_out: int,
        rank: int,
        alpha_scale: float,
        rng: np.random.Generator,
    ) -> None:
        if rank < 1 or 2 * rank > min(d_in, d_out):
            raise ContractError(
                f"rank {rank} must satisfy 1 <= r <= min({d_in}, {d_out}) / 2",
                rule_name="low_rank",
            )
        self.rank = rank
        self.alpha_scale = alpha_scale
        self.A = parameter(rng.normal(0.0, LORA_INIT_STD, size=(d_in, rank)))
        self.B = parameter(np.zeros((rank, d_out)))

    @property
    def scaling(self) -> float:
        return self.alpha_scale / self.rank

    def delta(self, x: Node) -> Node:
        return ops.matmul(ops.matmul(x, self.A), self.B)


class _FrozenBase(Module):
    def __init__(self, w0: Matrix, b0: Optional[Matrix]) -> None:
        self.W0 = constant(w0)
        self.b0 = constant(b0) if b0 is not None else None

    @property
    def d_in(self) -> int:
        return self.W0.shape[0]

    @property
    def d_out(self) -> int:
        return self.W0.shape[1]

    def base(self, x: Node) -> Node:
        if x.shape[1] != self.d_in:
            raise DimensionError("input width differs from the frozen layer",
                                 x.shape, self.W0.shape)
        out = ops.matmul(x, self.W0)
        if self.b0 is not None:
            out = ops.add_bias(out, self.b0)
        return out


class LoraLayer(_FrozenBase):
    """Plain LoRA: frozen W0 plus one trainable low-rank pair."""

    def __init__(
        self,
        w0: Matrix,
        rank: int,
        alpha_scale: float,
        rng: np.random.Generator,
        b0: Optional[Matrix] = None,
    ) -> None:
        super().__init__(w0, b0)
        self.expert = LoraExpert(self.d_in, self.d_out, rank, alpha_scale, rng)

    def __call__(self, x: Node) -> Node:
        return ops.add(self.base(x), ops.scale(self.expert.delta(x), self.expert.scaling))


class LoraMoeLayer(_FrozenBase):
    """Frozen W0 plus N LoRA experts mixed by a sparse top-K router."""

    def __init__(
        self,
        w0: Matrix,
        rank: int,
        alpha_scale: float,
        n_experts: int,
        top_k: int,
        rng: np.random.Generator,
        b0: Optional[Matrix] = None,
    ) -> None:
        super().__init__(w0, b0)
        if not 1 <= top_k <= n_experts:
            raise ContractError(
                f"top-k {top_k} outside [1, {n_experts}]", rule_name="top_k_range"
            )
        self.experts: List[LoraExpert] = [
            LoraExpert(self.d_in, self.d_out, rank, alpha_scale, rng)
            for _ in range(n_experts)
        ]
        self.router = RouterNet(self.d_in, n_experts, RouterKind.SPARSE, rng, top_k=top_k)

    @property
    def rank(self) -> int:
        return self.experts[0].rank

    @property
    def scaling(self) -> float:
        return self.experts[0].scaling

    def __call__(self, x: Node) -> Node:
        return lora_moe_forward(x, self)


def lora_moe_forward(x: Node, layer: LoraMoeLayer) -> Node:
    """h = x·W0 + (α/r)·Σ_k R(x)_k·(x·A_k)·B_k."""
    base = layer.base(x)
    weights = layer.router(x)
    mixture = moe_combine([expert.delta(x) for expert in layer.experts], weights)
    return ops.add(base, ops.scale(mixture, layer.scaling))


def trainable_params(layer: Module) -> Dict[str, Node]:
    """A_k, B_k and router parameters; the frozen W0 (and bias) never appear."""
    return layer.trainable_parameters()


def wrap_linear(
    linear: Linear,
    mode: str,
    rank: int,
    alpha_scale: float,
    rng: np.random.Generator,
    n_experts: int = 5,
    top_k: int = 2,
) -> Module:
    """Freeze ``linear`` and attach a LoRA (``mode='lora'``) or LoRA-MoE adapter."""
    w0 = linear.weight.value.copy()
    b0 = linear.bias.value.copy() if linear.bias is not None else None
    if mode == "lora":
        return LoraLayer(w0, rank, alpha_scale, rng, b0=b0)
    if mode == "lora-moe":
        return LoraMoeLayer(w0, rank, alpha_scale, n_experts, top_k, rng, b0=b0)
    raise ContractError(f"unknown lora mode {mode!r}", rule_name="lora_mode")
