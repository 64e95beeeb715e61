"""Tests for saving and restoring parameter states."""

import json

import numpy as np
import pytest

from app.checkpoint import load_checkpoint, load_state_dict, save_checkpoint, state_dict
from app.exceptions import ConfigurationError, ContractError, DimensionError, ReportIOError
from app.numerics import MLP, make_rng


def test_saved_state_restores_exactly(tmp_path, rng):
    source = MLP(3, 5, 2, rng)
    target = MLP(3, 5, 2, make_rng(99, "other"))
    save_checkpoint(tmp_path / "ckpt.json", state_dict(source))
    load_state_dict(target, load_checkpoint(tmp_path / "ckpt.json"))
    for name, value in state_dict(source).items():
        np.testing.assert_array_equal(state_dict(target)[name], value)


def test_loading_copies_values(rng):
    model = MLP(2, 2, 2, rng)
    state = state_dict(model)
    load_state_dict(model, state)
    state["fc1.weight"][0, 0] = 123.0
    assert model.fc1.weight.value[0, 0] != 123.0


def test_missing_parameters_are_reported(rng):
    model = MLP(2, 2, 2, rng)
    state = state_dict(model)
    del state["fc2.bias"]
    with pytest.raises(ContractError) as excinfo:
        load_state_dict(model, state)
    assert excinfo.value.context["missing"] == ["fc2.bias"]


def test_shape_mismatch_is_a_contract_error(rng):
    model = MLP(2, 2, 2, rng)
    state = state_dict(MLP(2, 3, 2, rng))
    with pytest.raises(ContractError, match="fc1.weight"):
        load_state_dict(model, state)


def test_value_count_must_match_shape(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"w": {"shape": [2, 2], "values": [1.0, 2.0]}}))
    with pytest.raises(DimensionError):
        load_checkpoint(path)


def test_malformed_entry(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"w": {"values": [1.0]}}))
    with pytest.raises(ContractError):
        load_checkpoint(path)


def test_unreadable_files(tmp_path):
    with pytest.raises(ReportIOError):
        load_checkpoint(tmp_path / "missing.json")
    (tmp_path / "broken.json").write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_checkpoint(tmp_path / "broken.json")
