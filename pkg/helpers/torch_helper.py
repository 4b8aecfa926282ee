"""Torch runtime helpers: seeding, device selection, parameter counts and frozen-weight hashing."""
import hashlib
import random
from typing import Iterable, Optional, Union

import numpy as np
import torch
from torch import nn

from core.configuration.runtime_config import RuntimeConfig
from core.exceptions import FrozenWeightsError
from core.logger import Log


def seed_everything(seed: int) -> None:
    """Seed python, numpy and torch generators."""
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)


def configure_runtime(device: Optional[str] = None, deterministic: Optional[bool] = None,
                      num_threads: Optional[int] = None) -> torch.device:
    """
    Apply [RUNTIME] settings (or the given overrides) to torch.

    @return: Selected device; falls back to cpu when the requested accelerator is missing
    """
    device = device or RuntimeConfig.get_device()
    deterministic = RuntimeConfig.is_deterministic() if deterministic is None else deterministic
    num_threads = RuntimeConfig.get_num_threads() if num_threads is None else num_threads

    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
        torch.backends.cudnn.benchmark = False
    if num_threads:
        torch.set_num_threads(num_threads)
    return resolve_device(device)


def resolve_device(device: Union[str, torch.device]) -> torch.device:
    device = torch.device(device)
    if device.type == 'cuda' and not torch.cuda.is_available():
        Log.warning(f"Device {device} requested but CUDA is unavailable, using cpu")
        return torch.device('cpu')
    if device.type == 'mps' and not torch.backends.mps.is_available():
        Log.warning("Device mps requested but unavailable, using cpu")
        return torch.device('cpu')
    return device


def count_parameters(model: nn.Module, trainable_only: bool = True) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)


def weights_hash(model: Union[nn.Module, dict]) -> str:
    """SHA-256 over every tensor of the state dict, in sorted key order."""
    state = model.state_dict() if isinstance(model, nn.Module) else model
    digest = hashlib.sha256()
    for key in sorted(state):
        tensor = state[key].detach().cpu().contiguous()
        digest.update(key.encode())
        digest.update(str(tuple(tensor.shape)).encode())
        digest.update(str(tensor.dtype).encode())
        digest.update(tensor.numpy().tobytes() if tensor.dtype != torch.bfloat16 else tensor.float().numpy().tobytes())
    return digest.hexdigest()


def freeze(model: nn.Module) -> str:
    """
    Switch a model to eval mode and disable gradients for all its parameters.

    @return: Hash of the frozen weights
    """
    model.eval()
    for parameter in model.parameters():
        parameter.requires_grad_(False)
    return weights_hash(model)


def assert_frozen(model: nn.Module, expected_hash: str) -> None:
    """
    @raises FrozenWeightsError: a parameter is trainable or the weights changed since freezing
    """
    trainable = [name for name, p in model.named_parameters() if p.requires_grad]
    if trainable:
        raise FrozenWeightsError(f"Segmentation prior has trainable parameters: {trainable[:5]}",
                                 expected_hash, None)
    actual = weights_hash(model)
    if actual != expected_hash:
        raise FrozenWeightsError("Segmentation prior weights changed after freezing", expected_hash, actual)


def set_requires_grad(models: Iterable[nn.Module], flag: bool) -> None:
    for model in models:
        for parameter in model.parameters():
            parameter.requires_grad_(flag)


def to_batch(array: np.ndarray, device: torch.device) -> torch.Tensor:
    """(C, D, H, W) array -> (1, C, D, H, W) float32 tensor on device."""
    return torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32)).unsqueeze(0).to(device)
