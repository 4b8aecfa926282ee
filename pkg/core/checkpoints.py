"""Checkpoint archives and CSV training logs."""
import os
import pickle
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import pandas as pd
import torch
from filelock import FileLock

from core.exceptions import CheckpointError
from core.logger import Log

PathLike = Union[str, Path]
LAST_CHECKPOINT = "last.pt"
BEST_CHECKPOINT = "best.pt"
TRAINING_LOG = "training_log.csv"


def _lock(path: Path) -> FileLock:
    return FileLock(str(path) + ".lock")


def save_checkpoint(path: PathLike, payload: Mapping[str, Any]) -> Path:
    """
    Write a checkpoint atomically: the archive is serialized to a temporary file
    which then replaces the target under a file lock.

    @param path: Target .pt file
    @param payload: Weights, optimizer states, config and epoch metrics (tensors and plain python values)
    @return: Written path
    @raises CheckpointError: the archive cannot be written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        with _lock(path):
            torch.save(dict(payload), tmp)
            os.replace(tmp, path)
    except (OSError, RuntimeError) as e:
        raise CheckpointError(f"Cannot write checkpoint {path}: {e}", str(path)) from e
    Log.debug(f"Checkpoint written: {path}")
    return path


def load_checkpoint(path: PathLike, map_location: Optional[Union[str, torch.device]] = 'cpu') -> Dict[str, Any]:
    """
    @raises CheckpointError: missing or unreadable archive
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}", str(path))
    try:
        with _lock(path):
            return torch.load(path, map_location=map_location, weights_only=True)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}", str(path)) from e


def write_training_log(rows: List[Dict[str, Any]], path: PathLike) -> Path:
    """Write per-epoch rows (one dict per epoch) as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(path, index=False)
    return path


def read_training_log(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path)
