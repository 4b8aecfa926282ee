"""
T-REX training.

Phase A trains the network as a least-squares conditional GAN: the generator loss is the
adversarial term plus the content loss, and the discriminator judges (ULF condition,
candidate HF) pairs. Phase B keeps the content loss only and leaves the discriminator untouched.
"""
import copy
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import torch

from core.checkpoints import BEST_CHECKPOINT, LAST_CHECKPOINT, TRAINING_LOG, load_checkpoint, save_checkpoint, \
    write_training_log
from core.configuration.slab_config import SlabConfig
from core.exceptions import EmptyDatasetError, TrainingError
from core.logger import Log
from core.slab_engine import sample_training_slab
from data.volume import CONTRASTS, Subject
from helpers.data_time_helper import format_duration
from helpers.torch_helper import assert_frozen, seed_everything, set_requires_grad, to_batch, weights_hash
from models.discriminator_model import DiscriminatorConfig, PatchDiscriminator3d, build_discriminator
from models.trex_model import Trex, TrexConfig, build_trex
from training.inference import infer_trex, model_device, segmentation_probs
from training.losses import (
    ContentLossWeights, content_loss, discriminator_adversarial_loss, generator_adversarial_loss
)
from training.schedules import TrexSchedule
from training.validation import baseline_report, require_pairs, selection_score, validation_report

SOURCE = "trex"
# The discriminator sees the ULF condition next to the real or generated HF candidate
CONDITION_CHANNELS = 2 * len(CONTRASTS)


@dataclass
class TrexTrainingResult:
    network: Trex
    discriminator: PatchDiscriminator3d
    best_epoch: int
    best_score: float
    baseline_score: float
    seg_hash: str
    history: List[Dict[str, Any]] = field(default_factory=list)
    checkpoint: Optional[Path] = None


def _train_epoch(network: Trex, discriminator: PatchDiscriminator3d, opt_g: torch.optim.Optimizer,
                 opt_d: torch.optim.Optimizer, seg_model: torch.nn.Module, train: Sequence[Subject],
                 content_weights: ContentLossWeights, lambda_adv: float, schedule: TrexSchedule,
                 slab_depth: int, epoch: int, device: torch.device) -> Dict[str, Any]:
    seed = schedule.seed * 100_003 + epoch
    seed_everything(seed)
    rng = np.random.default_rng(seed)
    adversarial = schedule.phase(epoch) == "A"
    network.train()
    discriminator.train(adversarial)
    set_requires_grad([discriminator], False)

    sums = {'loss_content': 0.0, 'loss_adv': 0.0, 'loss_g': 0.0, 'loss_d': 0.0}
    d_updates = 0
    for index in rng.permutation(len(train)):
        subject = train[index]
        if schedule.slab_training:
            subject = sample_training_slab(subject, min(slab_depth, subject.shape[0]), rng)
        ulf, hf = to_batch(subject.stack("ulf"), device), to_batch(subject.stack("hf"), device)
        fake = network(torch.cat([ulf, segmentation_probs(seg_model, ulf)], dim=1))

        content = content_loss(fake, hf, content_weights)
        loss_g = content
        if adversarial:
            adv = generator_adversarial_loss(discriminator(torch.cat([ulf, fake], dim=1)))
            loss_g = lambda_adv * adv + content
            sums['loss_adv'] += float(adv.detach())
        opt_g.zero_grad()
        loss_g.backward()
        opt_g.step()

        if adversarial:
            set_requires_grad([discriminator], True)
            loss_d = discriminator_adversarial_loss(discriminator(torch.cat([ulf, hf], dim=1)),
                                                    discriminator(torch.cat([ulf, fake.detach()], dim=1)))
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()
            set_requires_grad([discriminator], False)
            d_updates += 1
            sums['loss_d'] += float(loss_d.detach())

        sums['loss_content'] += float(content.detach())
        sums['loss_g'] += float(loss_g.detach())

    return {'epoch': epoch, 'phase': schedule.phase(epoch), 'd_updates': d_updates,
            **{k: v / len(train) for k, v in sums.items()}}


def train_trex(train: Sequence[Subject], val: Sequence[Subject], seg_model: torch.nn.Module,
               config: TrexConfig = TrexConfig(), content_weights: ContentLossWeights = ContentLossWeights(),
               schedule: TrexSchedule = TrexSchedule(), discriminator_config: DiscriminatorConfig = DiscriminatorConfig(),
               lambda_adv: float = 1.0, out_dir: Optional[Union[str, Path]] = None,
               seg_hash: Optional[str] = None, resume: bool = False,
               aggregation: Optional[str] = None) -> TrexTrainingResult:
    """
    Train T-REX: adversarial phase A, then content-only fine-tuning in phase B.

    @param train: Paired, unit-normalized training subjects
    @param val: Paired validation subjects (checkpoint selection by masked weighted score)
    @param seg_model: Frozen segmentation prior
    @param config: Network configuration
    @param content_weights: L1 / PSNR / Sobel weights
    @param schedule: Phase lengths, slab sampling, optimizer settings and seed
    @param discriminator_config: Conditional patch discriminator configuration
    @param lambda_adv: Weight of the adversarial generator term in phase A
    @param out_dir: Checkpoint and training-log directory; nothing is written when None
    @param seg_hash: Hash recorded when the prior was frozen (default: hash it now)
    @param resume: Continue from <out_dir>/last.pt when it exists
    @raises EmptyScheduleError: schedule without epochs
    @raises MissingPairedDataError: a subject has no HF volumes
    @raises FrozenWeightsError: the prior is trainable or its weights changed
    @raises TrainingError: the discriminator changed during phase B
    """
    schedule.check()
    if lambda_adv < 0:
        raise ValueError(f"lambda_adv must be >= 0, got {lambda_adv}")
    if not train or not val:
        raise EmptyDatasetError("training set" if not train else "validation set")
    require_pairs(train, val)
    seg_hash = seg_hash or weights_hash(seg_model)
    assert_frozen(seg_model, seg_hash)
    device = model_device(seg_model)
    out_dir = Path(out_dir) if out_dir is not None else None
    slab_depth = schedule.slab_depth or SlabConfig.get_slab_depth()

    seed_everything(schedule.seed)
    network = build_trex(config).to(device)
    discriminator = build_discriminator(CONDITION_CHANNELS, discriminator_config).to(device)
    opt_g = torch.optim.Adam(network.parameters(), lr=schedule.learning_rate, betas=schedule.betas)
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=schedule.learning_rate, betas=schedule.betas)

    history: List[Dict[str, Any]] = []
    best_epoch, best_score, best_state = -1, -math.inf, copy.deepcopy(network.state_dict())
    first_epoch = 0
    if resume and out_dir is not None and (out_dir / LAST_CHECKPOINT).is_file():
        state = load_checkpoint(out_dir / LAST_CHECKPOINT, map_location=device)
        network.load_state_dict(state['network'])
        discriminator.load_state_dict(state['discriminator'])
        opt_g.load_state_dict(state['opt_g'])
        opt_d.load_state_dict(state['opt_d'])
        history = list(state['history'])
        best_epoch, best_score, best_state = int(state['best_epoch']), float(state['best_score']), state['best']
        first_epoch = int(state['epoch']) + 1
        Log.info(f"T-REX training resumed at epoch {first_epoch}")

    baseline = selection_score(baseline_report(val, aggregation))
    Log.step(f"T-REX training: {len(train)} train / {len(val)} val subjects, {schedule.epochs_adversarial} "
             f"adversarial + {schedule.epochs_finetune} fine-tune epochs, raw ULF val score {baseline:.4f}")

    def enhance(subject: Subject):
        return infer_trex(network, seg_model, subject, slab_depth=slab_depth)

    started = time.monotonic()
    d_hash = None
    for epoch in range(first_epoch, schedule.total_epochs):
        if schedule.phase(epoch) == "B" and d_hash is None:
            d_hash = weights_hash(discriminator)
            Log.info("T-REX phase B: content loss only, discriminator frozen")
        row = _train_epoch(network, discriminator, opt_g, opt_d, seg_model, train, content_weights, lambda_adv,
                           schedule, slab_depth, epoch, device)
        assert_frozen(seg_model, seg_hash)
        if d_hash is not None and weights_hash(discriminator) != d_hash:
            raise TrainingError("Discriminator weights changed during fine-tuning", "trex")
        row['val_weighted_masked'] = selection_score(validation_report(enhance, val, SOURCE, aggregation))
        history.append(row)
        if row['val_weighted_masked'] > best_score:
            best_epoch, best_score, best_state = epoch, row['val_weighted_masked'], copy.deepcopy(network.state_dict())
        Log.info(f"trex epoch {epoch:3d} [{row['phase']}] | G {row['loss_g']:.4f} (content {row['loss_content']:.4f}, "
                 f"adv {row['loss_adv']:.4f}) | D {row['loss_d']:.4f} ({row['d_updates']} updates) | "
                 f"val {row['val_weighted_masked']:.4f}")

        last_epoch = epoch == schedule.total_epochs - 1
        if out_dir is not None and ((epoch + 1) % schedule.checkpoint_every == 0 or last_epoch):
            save_checkpoint(out_dir / LAST_CHECKPOINT, {
                'network': network.state_dict(), 'discriminator': discriminator.state_dict(),
                'opt_g': opt_g.state_dict(), 'opt_d': opt_d.state_dict(), 'epoch': epoch, 'history': history,
                'best_epoch': best_epoch, 'best_score': best_score, 'best': best_state,
            })
            write_training_log(history, out_dir / TRAINING_LOG)

    network.load_state_dict(best_state)
    network.eval()
    discriminator.eval()
    checkpoint = None
    if out_dir is not None:
        checkpoint = save_checkpoint(out_dir / BEST_CHECKPOINT, {
            'network': network.state_dict(), 'config': config.model_dump(mode='json'),
            'best_epoch': best_epoch, 'best_score': best_score, 'seg_hash': seg_hash,
        })
    Log.step(f"T-REX done: best epoch {best_epoch}, val score {best_score:.4f} (raw ULF {baseline:.4f}), "
             f"took {format_duration(time.monotonic() - started)}")
    return TrexTrainingResult(network=network, discriminator=discriminator, best_epoch=best_epoch,
                              best_score=best_score, baseline_score=baseline, seg_hash=seg_hash,
                              history=history, checkpoint=checkpoint)


def load_trex(path: Union[str, Path], device: Optional[torch.device] = None) -> Trex:
    """Rebuild the network stored in a best-checkpoint archive, in evaluation mode."""
    state = load_checkpoint(path, map_location=device or 'cpu')
    network = build_trex(TrexConfig.model_validate(state['config']))
    network.load_state_dict(state['network'])
    return network.to(device or 'cpu').eval()
