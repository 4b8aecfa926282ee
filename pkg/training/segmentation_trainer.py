"""
Segmentation prior training.

Two phases: augmented epochs, then plain epochs on the same optimizer. The weights of
the epoch with the best validation mean Dice are restored and frozen at the end.
"""
import copy
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from core.checkpoints import BEST_CHECKPOINT, LAST_CHECKPOINT, TRAINING_LOG, load_checkpoint, save_checkpoint, \
    write_training_log
from core.configuration.runtime_config import RuntimeConfig
from core.exceptions import EmptyDatasetError, MissingLabelmapError, ShapeMismatchError
from core.logger import Log
from data.augmentation import AugmentationPolicy, augment
from data.volume import TissueClass, Subject, Volume
from helpers.data_time_helper import format_duration
from helpers.torch_helper import freeze, resolve_device, seed_everything, to_batch
from models.segmentation_model import SegModelConfig, SegmentationNet, build_segmentation_model, seg_forward
from training.losses import dice_ce_loss
from training.schedules import SegSchedule

LabelLike = Union[np.ndarray, Volume, torch.Tensor]
# Validation Dice is averaged over every tissue class; background is left out
VALIDATION_CLASSES = tuple(int(c) for c in TissueClass if c is not TissueClass.BACKGROUND)


@dataclass
class SegTrainingResult:
    model: SegmentationNet
    weights_hash: str
    best_epoch: int
    best_dice: float
    history: List[Dict[str, Any]] = field(default_factory=list)
    checkpoint: Optional[Path] = None


def _labels(x: LabelLike) -> np.ndarray:
    if isinstance(x, Volume):
        return np.asarray(x.data)
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def mean_dice(pred_labels: LabelLike, true_labels: LabelLike, classes: Iterable[int]) -> float:
    """
    Mean over classes of 2|P and T| / (|P| + |T|).

    Classes absent from both labelmaps are skipped; when every class is skipped the
    labelmaps agree everywhere on them and the result is 1.0.

    @raises ValueError: empty class set
    @raises ShapeMismatchError: labelmaps of different shapes
    """
    classes = list(classes)
    if not classes:
        raise ValueError("mean_dice needs at least one class")
    pred, true = _labels(pred_labels), _labels(true_labels)
    if pred.shape != true.shape:
        raise ShapeMismatchError(true.shape, pred.shape, "labelmaps")

    scores = []
    for label in classes:
        p, t = pred == label, true == label
        total = int(p.sum()) + int(t.sum())
        if total == 0:
            continue
        scores.append(2.0 * int(np.logical_and(p, t).sum()) / total)
    return float(np.mean(scores)) if scores else 1.0


def _check_dataset(train: Sequence[Subject], val: Sequence[Subject]) -> None:
    if not train:
        raise EmptyDatasetError("training set")
    if not val:
        raise EmptyDatasetError("validation set")
    missing = [s.subject_id for s in (*train, *val) if s.labelmap is None]
    if missing:
        raise MissingLabelmapError(missing)


@torch.no_grad()
def validate_segmentation(model: SegmentationNet, subjects: Sequence[Subject], device: torch.device,
                          classes: Sequence[int] = VALIDATION_CLASSES) -> float:
    """Mean Dice over the given subjects (evaluation mode)."""
    model.eval()
    scores = []
    for subject in subjects:
        labels = seg_forward(model, to_batch(subject.stack("ulf"), device)).labels()[0]
        scores.append(mean_dice(labels, subject.labelmap, classes))
    return float(np.mean(scores))


def _epoch_seed(schedule: SegSchedule, epoch: int) -> int:
    return schedule.seed * 100_003 + epoch


def _train_epoch(model: SegmentationNet, optimizer: torch.optim.Optimizer, train: Sequence[Subject],
                 schedule: SegSchedule, policy: AugmentationPolicy, epoch: int, device: torch.device) -> float:
    seed = _epoch_seed(schedule, epoch)
    seed_everything(seed)
    order = np.random.default_rng(seed).permutation(len(train))
    policy = policy if schedule.augmented(epoch) else AugmentationPolicy.disabled()

    model.train()
    losses = []
    for position, index in enumerate(order):
        subject = train[index]
        images, labels = augment((subject.stack("ulf"), subject.labelmap.data.astype(np.int64)),
                                 policy, seed=seed * 1_000 + position)
        logits = seg_forward(model, to_batch(images, device))
        target = torch.from_numpy(np.ascontiguousarray(labels, dtype=np.int64)).unsqueeze(0).to(device)
        loss = dice_ce_loss(logits, target)

        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(float(loss.detach()))
    return float(np.mean(losses))


def _payload(model: SegmentationNet, optimizer: torch.optim.Optimizer, config: SegModelConfig, epoch: int,
             history: List[Dict[str, Any]], best: Tuple[int, float, Dict[str, torch.Tensor]]) -> Dict[str, Any]:
    best_epoch, best_dice, best_state = best
    return {
        'model': model.state_dict(),
        'optimizer': optimizer.state_dict(),
        'config': config.model_dump(mode='json'),
        'epoch': epoch,
        'history': history,
        'best_epoch': best_epoch,
        'best_dice': best_dice,
        'best_model': best_state,
    }


def train_segmentation(train: Sequence[Subject], val: Sequence[Subject], config: SegModelConfig = SegModelConfig(),
                       schedule: SegSchedule = SegSchedule(), policy: AugmentationPolicy = AugmentationPolicy(),
                       out_dir: Optional[Union[str, Path]] = None, device: Optional[torch.device] = None,
                       resume: bool = False) -> SegTrainingResult:
    """
    Train the segmentation prior and freeze it.

    @param train: Unit-normalized subjects with labelmaps
    @param val: Validation subjects with labelmaps (checkpoint selection)
    @param config: Network configuration
    @param schedule: Epoch counts, optimizer settings and seed
    @param policy: Augmentation used during the first phase
    @param out_dir: Checkpoint and training-log directory; nothing is written when None
    @param device: Torch device (default [RUNTIME] device)
    @param resume: Continue from <out_dir>/last.pt when it exists
    @return: Frozen best model, its weight hash and the per-epoch log
    @raises EmptyScheduleError: schedule without epochs
    @raises EmptyDatasetError: no training or validation subjects
    @raises MissingLabelmapError: a subject has no labelmap
    """
    schedule.check()
    _check_dataset(train, val)
    device = device or resolve_device(RuntimeConfig.get_device())
    out_dir = Path(out_dir) if out_dir is not None else None

    seed_everything(schedule.seed)
    model = build_segmentation_model(config).to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=schedule.learning_rate, betas=schedule.betas)
    history: List[Dict[str, Any]] = []
    best = (-1, -1.0, copy.deepcopy(model.state_dict()))
    first_epoch = 0

    if resume and out_dir is not None and (out_dir / LAST_CHECKPOINT).is_file():
        state = load_checkpoint(out_dir / LAST_CHECKPOINT, map_location=device)
        model.load_state_dict(state['model'])
        optimizer.load_state_dict(state['optimizer'])
        history = list(state['history'])
        best = (int(state['best_epoch']), float(state['best_dice']), state['best_model'])
        first_epoch = int(state['epoch']) + 1
        Log.info(f"Segmentation training resumed at epoch {first_epoch}")

    Log.step(f"Segmentation training: {len(train)} train / {len(val)} val subjects, "
             f"{schedule.epochs_augmented} augmented + {schedule.epochs_plain} plain epochs")
    started = time.monotonic()
    for epoch in range(first_epoch, schedule.total_epochs):
        train_loss = _train_epoch(model, optimizer, train, schedule, policy, epoch, device)
        val_dice = validate_segmentation(model, val, device)
        history.append({'epoch': epoch, 'augmented': schedule.augmented(epoch),
                        'train_loss': train_loss, 'val_mean_dice': val_dice})
        if val_dice > best[1]:
            best = (epoch, val_dice, copy.deepcopy(model.state_dict()))
        Log.info(f"seg epoch {epoch:3d} | loss {train_loss:.4f} | val dice {val_dice:.4f} | best {best[1]:.4f}")

        last_epoch = epoch == schedule.total_epochs - 1
        if out_dir is not None and ((epoch + 1) % schedule.checkpoint_every == 0 or last_epoch):
            save_checkpoint(out_dir / LAST_CHECKPOINT, _payload(model, optimizer, config, epoch, history, best))
            write_training_log(history, out_dir / TRAINING_LOG)

    model.load_state_dict(best[2])
    weights = freeze(model)
    checkpoint = None
    if out_dir is not None:
        checkpoint = save_checkpoint(out_dir / BEST_CHECKPOINT, {
            'model': model.state_dict(), 'config': config.model_dump(mode='json'),
            'best_epoch': best[0], 'best_dice': best[1], 'weights_hash': weights,
        })
    Log.step(f"Segmentation prior frozen: epoch {best[0]}, val dice {best[1]:.4f}, "
             f"took {format_duration(time.monotonic() - started)}")
    return SegTrainingResult(model=model, weights_hash=weights, best_epoch=best[0], best_dice=best[1],
                             history=history, checkpoint=checkpoint)


def load_segmentation(path: Union[str, Path], device: Optional[torch.device] = None) -> Tuple[SegmentationNet, str]:
    """
    Rebuild and freeze a segmentation prior from its best-checkpoint archive.

    @return: (frozen model, weight hash)
    """
    device = device or resolve_device(RuntimeConfig.get_device())
    state = load_checkpoint(path, map_location=device)
    model = build_segmentation_model(SegModelConfig.model_validate(state['config'])).to(device)
    model.load_state_dict(state['model'])
    return model, freeze(model)
