"""Central finite-difference checks for autodiff gradients."""

from __future__ import annotations

from typing import Callable, Dict, Sequence

import numpy as np

from .tensor import Matrix, Node, backward

DEFAULT_STEP = 1e-5


def numerical_gradient(
    fn: Callable[[], Node], param: Node, step: float = DEFAULT_STEP
) -> Matrix:
    """d fn() / d param by central differences, perturbing ``param.value`` in place."""
    grad = np.zeros_like(param.value)
    for idx in np.ndindex(*param.value.shape):
        original = param.value[idx]
        param.value[idx] = original + step
        upper = fn().item()
        param.value[idx] = original - step
        lower = fn().item()
        param.value[idx] = original
        grad[idx] = (upper - lower) / (2.0 * step)
    return grad


def relative_error(analytic: Matrix, numeric: Matrix, floor: float = 1e-8) -> float:
    """Max elementwise |a − n| / max(|a|, |n|, floor)."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def check_gradients(
    fn: Callable[[], Node],
    params: Sequence[Node],
    step: float = DEFAULT_STEP,
    floor: float = 1e-8,
) -> Dict[int, float]:
    """
    Compare autodiff and finite-difference gradients of scalar ``fn()``.

    Returns the relative error per parameter position in ``params``.
    """
    for p in params:
        p.zero_grad()
    backward(fn())
    errors = {}
    for i, p in enumerate(params):
        analytic = p.grad.copy()
        numeric = numerical_gradient(fn, p, step)
        errors[i] = relative_error(analytic, numeric, floor)
    return errors
