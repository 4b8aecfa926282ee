"""One-epoch training runs of every network on 16^3 phantoms."""
import numpy as np
import pytest
import torch

from core.checkpoints import BEST_CHECKPOINT, LAST_CHECKPOINT, TRAINING_LOG
from core.exceptions import EmptyDatasetError, FrozenWeightsError, MissingPairedDataError
from data.augmentation import AugmentationPolicy
from helpers.torch_helper import weights_hash
from models.generator_model import Direction, GeneratorConfig
from training.cyclegan_trainer import load_cyclegan, train_cyclegan
from training.schedules import CycleGanSchedule, SegSchedule, TrexSchedule
from training.segmentation_trainer import load_segmentation, train_segmentation
from training.trex_trainer import load_trex, train_trex
from _tests.fixtures import TINY_DISCRIMINATOR, TINY_GENERATOR, TINY_SEG, TINY_TREX

TINY_BACKWARD = GeneratorConfig(direction=Direction.HF_TO_ULF, n_res_blocks=1, base_channels=4)


def test_segmentation_training_freezes_best_epoch(phantom_subjects, tmp_path):
    train, val = phantom_subjects[:3], phantom_subjects[3:]
    schedule = SegSchedule(epochs_augmented=1, epochs_plain=1, seed=2)

    result = train_segmentation(train, val, TINY_SEG, schedule, AugmentationPolicy(), out_dir=tmp_path)

    assert [row['augmented'] for row in result.history] == [True, False]
    assert result.best_dice == max(row['val_mean_dice'] for row in result.history)
    assert all(not p.requires_grad for p in result.model.parameters())
    for name in (BEST_CHECKPOINT, LAST_CHECKPOINT, TRAINING_LOG):
        assert (tmp_path / name).is_file()

    _, reloaded_hash = load_segmentation(tmp_path / BEST_CHECKPOINT)
    assert reloaded_hash == result.weights_hash


def test_segmentation_training_resumes_finished_run(phantom_subjects, tmp_path):
    """A completed run resumed from its last checkpoint trains no further and keeps its weights."""
    train, val = phantom_subjects[:3], phantom_subjects[3:]
    schedule = SegSchedule(epochs_augmented=1, epochs_plain=0, seed=4)

    first = train_segmentation(train, val, TINY_SEG, schedule, out_dir=tmp_path)
    resumed = train_segmentation(train, val, TINY_SEG, schedule, out_dir=tmp_path, resume=True)

    assert resumed.weights_hash == first.weights_hash
    assert len(resumed.history) == 1


def test_segmentation_training_needs_subjects(phantom_subjects):
    with pytest.raises(EmptyDatasetError):
        train_segmentation([], phantom_subjects, TINY_SEG, SegSchedule(epochs_augmented=1, epochs_plain=0))


def test_cyclegan_training_keeps_prior_frozen(phantom_subjects, frozen_seg, tmp_path):
    seg_model, seg_hash = frozen_seg
    schedule = CycleGanSchedule(epochs=1, slab_depth=8, seed=1)

    result = train_cyclegan(phantom_subjects[:3], phantom_subjects[3:], seg_model, TINY_GENERATOR, TINY_BACKWARD,
                            schedule=schedule, discriminator=TINY_DISCRIMINATOR, out_dir=tmp_path,
                            seg_hash=seg_hash)

    assert weights_hash(seg_model) == seg_hash
    assert result.seg_hash == seg_hash
    row = result.history[0]
    # The paired penalty is zero in the first epoch
    assert row['paired_weight'] == 0.0
    assert np.isfinite([row['loss_g'], row['loss_d'], row['loss_cycle']]).all()

    networks = load_cyclegan(tmp_path / BEST_CHECKPOINT)
    x = torch.rand(1, 3, 8, 16, 16)
    assert networks.g_hf_to_ulf(x).shape == x.shape


def test_cyclegan_training_rejects_unpaired_and_trainable_prior(phantom_subjects, frozen_seg):
    seg_model, seg_hash = frozen_seg
    schedule = CycleGanSchedule(epochs=1, slab_depth=8)
    unpaired = phantom_subjects[0]
    unpaired.hf = None

    with pytest.raises(MissingPairedDataError):
        train_cyclegan([unpaired], phantom_subjects[3:], seg_model, TINY_GENERATOR, TINY_BACKWARD,
                       schedule=schedule, discriminator=TINY_DISCRIMINATOR)

    next(seg_model.parameters()).requires_grad_(True)
    with pytest.raises(FrozenWeightsError):
        train_cyclegan(phantom_subjects[1:3], phantom_subjects[3:], seg_model, TINY_GENERATOR, TINY_BACKWARD,
                       schedule=schedule, discriminator=TINY_DISCRIMINATOR, seg_hash=seg_hash)


def test_trex_training_runs_both_phases(phantom_subjects, frozen_seg, tmp_path):
    seg_model, seg_hash = frozen_seg
    schedule = TrexSchedule(epochs_adversarial=1, epochs_finetune=1, slab_depth=8, seed=3)

    result = train_trex(phantom_subjects[:3], phantom_subjects[3:], seg_model, TINY_TREX, schedule=schedule,
                        discriminator_config=TINY_DISCRIMINATOR, out_dir=tmp_path, seg_hash=seg_hash)

    assert [row['phase'] for row in result.history] == ["A", "B"]
    assert result.history[0]['d_updates'] == 3
    assert result.history[1]['d_updates'] == 0 and result.history[1]['loss_adv'] == 0.0
    assert weights_hash(seg_model) == seg_hash

    network = load_trex(tmp_path / BEST_CHECKPOINT)
    out = network(torch.rand(1, TINY_TREX.in_channels, 8, 16, 16))
    assert out.shape == (1, 3, 8, 16, 16)


def test_trex_training_rejects_negative_adversarial_weight(phantom_subjects, frozen_seg):
    seg_model, _ = frozen_seg
    with pytest.raises(ValueError):
        train_trex(phantom_subjects[:3], phantom_subjects[3:], seg_model, TINY_TREX,
                   schedule=TrexSchedule(epochs_adversarial=1, epochs_finetune=0), lambda_adv=-1.0)
