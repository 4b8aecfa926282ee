"""
Segmentation-conditioned 3D CycleGAN training.

Each epoch draws one random slab per training subject. The ULF->HF generator sees the
frozen prior's tissue probabilities; both generators are updated together on the
adversarial, cycle and schedule-weighted paired terms, then both discriminators are
updated on the detached fakes.
"""
import copy
import itertools
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from core.checkpoints import BEST_CHECKPOINT, LAST_CHECKPOINT, TRAINING_LOG, load_checkpoint, save_checkpoint, \
    write_training_log
from core.configuration.slab_config import SlabConfig
from core.exceptions import EmptyDatasetError
from core.logger import Log
from core.slab_engine import sample_training_slab
from data.volume import Subject
from helpers.data_time_helper import format_duration
from helpers.torch_helper import assert_frozen, seed_everything, set_requires_grad, to_batch, weights_hash
from models.discriminator_model import DiscriminatorConfig, PatchDiscriminator3d, build_discriminator
from models.generator_model import Direction, GeneratorConfig, ResnetGenerator3d, build_generator, generator_inputs
from training.inference import infer_cyclegan, model_device, segmentation_probs
from training.losses import (
    CycleLossWeights, cycle_loss, discriminator_adversarial_loss, generator_adversarial_loss, paired_challenge_loss
)
from training.schedules import CycleGanSchedule, penalty_schedule
from training.validation import baseline_report, require_pairs, selection_score, validation_report

SOURCE = "cyclegan"


@dataclass
class CycleGanNetworks:
    g_ulf_to_hf: ResnetGenerator3d
    g_hf_to_ulf: ResnetGenerator3d
    d_hf: PatchDiscriminator3d
    d_ulf: PatchDiscriminator3d

    def generators(self) -> List[nn.Module]:
        return [self.g_ulf_to_hf, self.g_hf_to_ulf]

    def discriminators(self) -> List[nn.Module]:
        return [self.d_hf, self.d_ulf]

    def state(self) -> Dict[str, Dict[str, torch.Tensor]]:
        return {name: getattr(self, name).state_dict() for name in ('g_ulf_to_hf', 'g_hf_to_ulf', 'd_hf', 'd_ulf')}

    def load(self, state: Dict[str, Dict[str, torch.Tensor]]) -> None:
        for name, weights in state.items():
            getattr(self, name).load_state_dict(weights)


@dataclass
class CycleGanTrainingResult:
    networks: CycleGanNetworks
    best_epoch: int
    best_score: float
    baseline_score: float
    seg_hash: str
    history: List[Dict[str, Any]] = field(default_factory=list)
    checkpoint: Optional[Path] = None

    @property
    def generator(self) -> ResnetGenerator3d:
        return self.networks.g_ulf_to_hf


def build_cyclegan(forward: GeneratorConfig = GeneratorConfig(),
                   backward: GeneratorConfig = GeneratorConfig(direction=Direction.HF_TO_ULF),
                   discriminator: DiscriminatorConfig = DiscriminatorConfig()) -> CycleGanNetworks:
    if forward.direction is not Direction.ULF_TO_HF or backward.direction is not Direction.HF_TO_ULF:
        raise ValueError("CycleGAN needs one ulf_to_hf and one hf_to_ulf generator")
    return CycleGanNetworks(
        g_ulf_to_hf=build_generator(forward),
        g_hf_to_ulf=build_generator(backward),
        d_hf=build_discriminator(forward.out_channels, discriminator),
        d_ulf=build_discriminator(backward.out_channels, discriminator),
    )


def _translate(networks: CycleGanNetworks, ulf: torch.Tensor, hf: torch.Tensor, probs: torch.Tensor,
               seg_model: nn.Module) -> Tuple[torch.Tensor, ...]:
    g_forward, g_backward = networks.g_ulf_to_hf, networks.g_hf_to_ulf
    fake_hf = g_forward(*generator_inputs(g_forward.config, ulf, probs))
    rec_ulf = g_backward(fake_hf)
    fake_ulf = g_backward(hf)
    # Conditioning of the HF->ULF->HF cycle comes from the generated ULF, as it would for unpaired data
    fake_probs = segmentation_probs(seg_model, fake_ulf.detach())
    rec_hf = g_forward(*generator_inputs(g_forward.config, fake_ulf, fake_probs))
    return fake_hf, rec_ulf, fake_ulf, rec_hf


def _train_epoch(networks: CycleGanNetworks, optimizers: Tuple[torch.optim.Optimizer, torch.optim.Optimizer],
                 seg_model: nn.Module, train: Sequence[Subject], weights: CycleLossWeights,
                 schedule: CycleGanSchedule, slab_depth: int, epoch: int, device: torch.device) -> Dict[str, float]:
    seed = schedule.seed * 100_003 + epoch
    seed_everything(seed)
    rng = np.random.default_rng(seed)
    paired_weight = penalty_schedule(epoch, weights)
    opt_g, opt_d = optimizers
    for model in networks.generators() + networks.discriminators():
        model.train()

    sums = {'loss_adv': 0.0, 'loss_cycle': 0.0, 'loss_paired': 0.0, 'loss_g': 0.0, 'loss_d': 0.0}
    for index in rng.permutation(len(train)):
        slab = sample_training_slab(train[index], min(slab_depth, train[index].shape[0]), rng)
        ulf, hf = to_batch(slab.stack("ulf"), device), to_batch(slab.stack("hf"), device)
        probs = segmentation_probs(seg_model, ulf)

        set_requires_grad(networks.discriminators(), False)
        fake_hf, rec_ulf, fake_ulf, rec_hf = _translate(networks, ulf, hf, probs, seg_model)
        adv = (generator_adversarial_loss(networks.d_hf(fake_hf))
               + generator_adversarial_loss(networks.d_ulf(fake_ulf)))
        cyc = weights.lambda_cycle_ulf * cycle_loss(ulf, rec_ulf) + weights.lambda_cycle_hf * cycle_loss(hf, rec_hf)
        paired = paired_challenge_loss(fake_hf, hf)
        loss_g = weights.lambda_adv * adv + cyc + paired_weight * paired
        opt_g.zero_grad()
        loss_g.backward()
        opt_g.step()

        set_requires_grad(networks.discriminators(), True)
        loss_d = (discriminator_adversarial_loss(networks.d_hf(hf), networks.d_hf(fake_hf.detach()))
                  + discriminator_adversarial_loss(networks.d_ulf(ulf), networks.d_ulf(fake_ulf.detach())))
        opt_d.zero_grad()
        loss_d.backward()
        opt_d.step()

        for key, value in (('loss_adv', adv), ('loss_cycle', cyc), ('loss_paired', paired),
                           ('loss_g', loss_g), ('loss_d', loss_d)):
            sums[key] += float(value.detach())

    return {'epoch': epoch, 'paired_weight': paired_weight, **{k: v / len(train) for k, v in sums.items()}}


def _check_prior(seg_model: nn.Module, seg_hash: Optional[str]) -> str:
    expected = seg_hash or weights_hash(seg_model)
    assert_frozen(seg_model, expected)
    return expected


def train_cyclegan(train: Sequence[Subject], val: Sequence[Subject], seg_model: nn.Module,
                   forward: GeneratorConfig = GeneratorConfig(),
                   backward: GeneratorConfig = GeneratorConfig(direction=Direction.HF_TO_ULF),
                   weights: CycleLossWeights = CycleLossWeights(), schedule: CycleGanSchedule = CycleGanSchedule(),
                   discriminator: DiscriminatorConfig = DiscriminatorConfig(),
                   out_dir: Optional[Union[str, Path]] = None, seg_hash: Optional[str] = None,
                   resume: bool = False, aggregation: Optional[str] = None) -> CycleGanTrainingResult:
    """
    Train both generator/discriminator pairs.

    @param train: Paired, unit-normalized training subjects
    @param val: Paired validation subjects (checkpoint selection by masked weighted score)
    @param seg_model: Frozen segmentation prior; its weights are hash-checked every epoch
    @param forward: ULF->HF generator configuration
    @param backward: HF->ULF generator configuration
    @param weights: Loss weights and the paired-penalty schedule constants
    @param schedule: Epochs, optimizer settings, slab depth and seed
    @param discriminator: Patch discriminator configuration (both domains)
    @param out_dir: Checkpoint and training-log directory; nothing is written when None
    @param seg_hash: Hash recorded when the prior was frozen (default: hash it now)
    @param resume: Continue from <out_dir>/last.pt when it exists
    @return: Networks holding the best-epoch weights, training log and scores
    @raises EmptyScheduleError: schedule without epochs
    @raises MissingPairedDataError: a subject has no HF volumes
    @raises FrozenWeightsError: the prior is trainable or its weights changed
    """
    schedule.check()
    if not train or not val:
        raise EmptyDatasetError("training set" if not train else "validation set")
    require_pairs(train, val)
    seg_hash = _check_prior(seg_model, seg_hash)
    device = model_device(seg_model)
    out_dir = Path(out_dir) if out_dir is not None else None
    slab_depth = schedule.slab_depth or SlabConfig.get_slab_depth()

    seed_everything(schedule.seed)
    networks = build_cyclegan(forward, backward, discriminator)
    for model in networks.generators() + networks.discriminators():
        model.to(device)
    opt_g = torch.optim.Adam(itertools.chain(*(g.parameters() for g in networks.generators())),
                             lr=schedule.learning_rate, betas=schedule.betas)
    opt_d = torch.optim.Adam(itertools.chain(*(d.parameters() for d in networks.discriminators())),
                             lr=schedule.learning_rate, betas=schedule.betas)

    history: List[Dict[str, Any]] = []
    best_epoch, best_score, best_state = -1, -math.inf, copy.deepcopy(networks.state())
    first_epoch = 0
    if resume and out_dir is not None and (out_dir / LAST_CHECKPOINT).is_file():
        state = load_checkpoint(out_dir / LAST_CHECKPOINT, map_location=device)
        networks.load(state['networks'])
        opt_g.load_state_dict(state['opt_g'])
        opt_d.load_state_dict(state['opt_d'])
        history = list(state['history'])
        best_epoch, best_score, best_state = int(state['best_epoch']), float(state['best_score']), state['best']
        first_epoch = int(state['epoch']) + 1
        Log.info(f"CycleGAN training resumed at epoch {first_epoch}")

    baseline = selection_score(baseline_report(val, aggregation))
    Log.step(f"CycleGAN training: {len(train)} train / {len(val)} val subjects, {schedule.epochs} epochs, "
             f"{forward.conditioning_mode.value} conditioning, raw ULF val score {baseline:.4f}")

    def enhance(subject: Subject):
        return infer_cyclegan(networks.g_ulf_to_hf, seg_model, subject, slab_depth=slab_depth)

    started = time.monotonic()
    for epoch in range(first_epoch, schedule.epochs):
        row = _train_epoch(networks, (opt_g, opt_d), seg_model, train, weights, schedule, slab_depth, epoch, device)
        _check_prior(seg_model, seg_hash)
        row['val_weighted_masked'] = selection_score(validation_report(enhance, val, SOURCE, aggregation))
        history.append(row)
        if row['val_weighted_masked'] > best_score:
            best_epoch, best_score, best_state = epoch, row['val_weighted_masked'], copy.deepcopy(networks.state())
        Log.info(f"cyclegan epoch {epoch:3d} | G {row['loss_g']:.4f} (adv {row['loss_adv']:.4f}, "
                 f"cycle {row['loss_cycle']:.4f}, paired {row['loss_paired']:.4f} x {row['paired_weight']:.4f}) | "
                 f"D {row['loss_d']:.4f} | val {row['val_weighted_masked']:.4f}")

        last_epoch = epoch == schedule.epochs - 1
        if out_dir is not None and ((epoch + 1) % schedule.checkpoint_every == 0 or last_epoch):
            save_checkpoint(out_dir / LAST_CHECKPOINT, {
                'networks': networks.state(), 'opt_g': opt_g.state_dict(), 'opt_d': opt_d.state_dict(),
                'epoch': epoch, 'history': history, 'best_epoch': best_epoch, 'best_score': best_score,
                'best': best_state,
            })
            write_training_log(history, out_dir / TRAINING_LOG)

    networks.load(best_state)
    for model in networks.generators() + networks.discriminators():
        model.eval()
    checkpoint = None
    if out_dir is not None:
        checkpoint = save_checkpoint(out_dir / BEST_CHECKPOINT, {
            'networks': networks.state(), 'forward': forward.model_dump(mode='json'),
            'backward': backward.model_dump(mode='json'), 'discriminator': discriminator.model_dump(mode='json'),
            'best_epoch': best_epoch, 'best_score': best_score, 'seg_hash': seg_hash,
        })
    Log.step(f"CycleGAN done: best epoch {best_epoch}, val score {best_score:.4f} (raw ULF {baseline:.4f}), "
             f"took {format_duration(time.monotonic() - started)}")
    return CycleGanTrainingResult(networks=networks, best_epoch=best_epoch, best_score=best_score,
                                  baseline_score=baseline, seg_hash=seg_hash, history=history,
                                  checkpoint=checkpoint)


def load_cyclegan(path: Union[str, Path], device: Optional[torch.device] = None) -> CycleGanNetworks:
    """Rebuild the networks stored in a best-checkpoint archive, in evaluation mode."""
    state = load_checkpoint(path, map_location=device or 'cpu')
    networks = build_cyclegan(GeneratorConfig.model_validate(state['forward']),
                              GeneratorConfig.model_validate(state['backward']),
                              DiscriminatorConfig.model_validate(state['discriminator']))
    networks.load(state['networks'])
    for model in networks.generators() + networks.discriminators():
        model.to(device or 'cpu').eval()
    return networks
