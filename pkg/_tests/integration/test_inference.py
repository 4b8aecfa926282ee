"""Slab-wise enhancement with untrained tiny networks."""
import numpy as np
import pytest

from data.volume import CONTRASTS, NormState
from helpers.torch_helper import freeze, seed_everything, weights_hash
from models.generator_model import ConditioningMode, build_generator
from models.trex_model import build_trex
from training.inference import baseline_enhancement, infer_cyclegan, infer_trex
from _tests.fixtures import TINY_GENERATOR, TINY_TREX


@pytest.fixture
def generator():
    seed_everything(0)
    model = build_generator(TINY_GENERATOR)
    freeze(model)
    return model


@pytest.fixture
def trex():
    seed_everything(0)
    model = build_trex(TINY_TREX)
    freeze(model)
    return model


def _assert_enhancement(enhancement, subject, source):
    assert enhancement.subject_id == subject.subject_id
    assert enhancement.source == source
    assert set(enhancement.volumes) == set(CONTRASTS)
    for volume in enhancement.volumes.values():
        assert volume.shape == subject.shape
        assert volume.norm_state is NormState.UNIT_NORMALIZED
        assert 0.0 <= volume.data.min() and volume.data.max() <= 1.0


def test_cyclegan_inference_shapes(generator, frozen_seg, phantom_subject):
    seg_model, seg_hash = frozen_seg

    enhancement = infer_cyclegan(generator, seg_model, phantom_subject, slab_depth=8, stride=4)

    _assert_enhancement(enhancement, phantom_subject, "cyclegan")
    assert weights_hash(seg_model) == seg_hash


def test_cyclegan_inference_is_worker_independent(generator, frozen_seg, phantom_subject):
    seg_model, _ = frozen_seg

    serial = infer_cyclegan(generator, seg_model, phantom_subject, slab_depth=8, stride=4, max_workers=1)
    threaded = infer_cyclegan(generator, seg_model, phantom_subject, slab_depth=8, stride=4, max_workers=3)

    np.testing.assert_allclose(threaded.stack(), serial.stack(), atol=1e-6)


def test_cyclegan_inference_with_full_volume_conditioning(frozen_seg, phantom_subject):
    seg_model, _ = frozen_seg
    seed_everything(0)
    spade = build_generator(TINY_GENERATOR.model_copy(update={'conditioning_mode': ConditioningMode.SPADE}))
    freeze(spade)

    enhancement = infer_cyclegan(spade, seg_model, phantom_subject, slab_depth=8, stride=8,
                                 per_slab_conditioning=False)

    _assert_enhancement(enhancement, phantom_subject, "cyclegan")


def test_trex_inference_whole_volume_and_slabs(trex, frozen_seg, phantom_subject):
    seg_model, _ = frozen_seg

    whole = infer_trex(trex, seg_model, phantom_subject, slab_depth=40)
    slabs = infer_trex(trex, seg_model, phantom_subject, slab_depth=8, stride=4)

    _assert_enhancement(whole, phantom_subject, "trex")
    _assert_enhancement(slabs, phantom_subject, "trex")


def test_baseline_enhancement_is_the_input(phantom_subject):
    baseline = baseline_enhancement(phantom_subject)
    assert baseline.source == "ulf"
    np.testing.assert_array_equal(baseline.stack(), phantom_subject.stack("ulf"))
