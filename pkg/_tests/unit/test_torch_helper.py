"""Torch runtime helpers."""
import numpy as np
import pytest
import torch

from core.exceptions import FrozenWeightsError
from helpers.torch_helper import (
    assert_frozen, configure_runtime, count_parameters, freeze, resolve_device, seed_everything, to_batch,
    weights_hash
)


def test_seed_everything_reproduces_draws():
    seed_everything(3)
    first = (np.random.rand(), torch.rand(1).item())
    seed_everything(3)
    assert (np.random.rand(), torch.rand(1).item()) == first


def test_freeze_and_hash():
    model = torch.nn.Linear(4, 2)
    assert count_parameters(model) == 10

    digest = freeze(model)

    assert not model.training
    assert count_parameters(model) == 0 and count_parameters(model, trainable_only=False) == 10
    assert digest == weights_hash(model) == weights_hash(model.state_dict())
    assert_frozen(model, digest)


def test_assert_frozen_detects_changes():
    model = torch.nn.Linear(4, 2)
    digest = freeze(model)

    with torch.no_grad():
        model.bias.add_(1.0)
    with pytest.raises(FrozenWeightsError):
        assert_frozen(model, digest)

    model.bias.requires_grad_(True)
    with pytest.raises(FrozenWeightsError):
        assert_frozen(model, weights_hash(model))


def test_device_resolution():
    assert configure_runtime(device="cpu", deterministic=True) == torch.device("cpu")
    if not torch.cuda.is_available():
        assert resolve_device("cuda") == torch.device("cpu")


def test_to_batch():
    batch = to_batch(np.zeros((3, 2, 2, 2), dtype=np.float64), torch.device("cpu"))
    assert batch.shape == (1, 3, 2, 2, 2) and batch.dtype == torch.float32
