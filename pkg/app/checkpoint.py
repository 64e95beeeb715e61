"""
Flat JSON checkpoints: ``{parameter name: {"shape": [r, c], "values": [...]}}``.

Names are the dotted paths of ``Module.named_parameters``; frozen weights are
saved too so a LoRA model can be rebuilt exactly. Floats are written with
Python's shortest round-trip repr, so load(save(x)) == x bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

from .exceptions import ContractError, DimensionError, ReportIOError, handle_exception
from .logging_config import get_logger
from .numerics import Matrix, Module

logger = get_logger("checkpoint")

StateDict = Dict[str, Matrix]


def state_dict(module: Module) -> StateDict:
    return {name: node.value.copy() for name, node in module.named_parameters().items()}


def load_state_dict(module: Module, state: Mapping[str, Matrix]) -> None:
    """Copy ``state`` into ``module``; names and shapes must match exactly."""
    params = module.named_parameters()
    missing = sorted(set(params) - set(state))
    unexpected = sorted(set(state) - set(params))
    if missing or unexpected:
        raise ContractError(
            "checkpoint does not match the configured model",
            rule_name="checkpoint_names",
            context={"missing": missing[:10], "unexpected": unexpected[:10]},
        )
    for name, node in params.items():
        value = np.asarray(state[name], dtype=np.float64)
        if value.shape != node.value.shape:
            raise ContractError(
                f"checkpoint entry {name} has shape {value.shape}, "
                f"model expects {node.value.shape}",
                rule_name="checkpoint_shapes",
            )
        node.value = value.copy()


def save_checkpoint(path: Path, state: Mapping[str, Matrix]) -> None:
    document = {
        name: {"shape": list(value.shape), "values": value.ravel().tolist()}
        for name, value in state.items()
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(document), encoding="utf-8")
    except OSError as e:
        raise ReportIOError(f"cannot write checkpoint: {e}", path=str(path)) from e
    logger.debug("checkpoint written", extra={"path": str(path), "entries": len(document)})


def load_checkpoint(path: Path) -> StateDict:
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise handle_exception("load_checkpoint", e, {"path": str(path)}) from e
    if not isinstance(document, dict):
        raise ContractError("checkpoint must be a JSON object", rule_name="checkpoint_format")

    state: StateDict = {}
    for name, entry in document.items():
        try:
            rows, cols = (int(n) for n in entry["shape"])
            values = np.asarray(entry["values"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise ContractError(
                f"malformed checkpoint entry {name!r}", rule_name="checkpoint_format"
            ) from e
        if values.size != rows * cols:
            raise DimensionError(f"checkpoint entry {name} holds {values.size} values",
                                 (rows, cols), (values.size,))
        state[name] = values.reshape(rows, cols)
    return state
