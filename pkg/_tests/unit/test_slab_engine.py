"""Slab planning, sampling and stitching."""
import numpy as np
import pytest
from scipy import stats

from core.exceptions import ShapeMismatchError, SlabCoverageError, SlabPlanError
from core.slab_engine import (
    SlabAccumulator, SlabPlan, draw_slab_start, enumerate_slabs, extract_slabs, run_slab_inference,
    sample_training_slab, stitch
)
from _tests.fixtures import constant_subject


def test_enumerate_slabs_adds_tail_slab():
    """Depth 50, slab 40, stride 5 gives starts 0, 5, 10 and covers every slice."""
    plan = enumerate_slabs(50, 40, 5)

    assert plan.starts == (0, 5, 10)
    assert np.all(plan.coverage() >= 1)


@pytest.mark.parametrize("depth", range(1, 25))
@pytest.mark.parametrize("slab_depth,stride", [(1, 1), (3, 2), (4, 4), (5, 3), (8, 5)])
def test_enumerate_slabs_covers_every_slice(depth, slab_depth, stride):
    if slab_depth > depth:
        with pytest.raises(SlabPlanError):
            enumerate_slabs(depth, slab_depth, stride)
        return

    plan = enumerate_slabs(depth, slab_depth, stride)

    assert plan.starts[0] == 0
    assert plan.starts[-1] == depth - slab_depth
    assert list(plan.starts) == sorted(set(plan.starts))
    assert np.all(plan.coverage() >= 1)


def test_enumerate_slabs_whole_volume_is_one_slab():
    assert enumerate_slabs(12, 12, 3).starts == (0,)


def test_enumerate_slabs_uses_ini_defaults():
    plan = enumerate_slabs(64)
    assert plan.slab_depth == 40 and plan.stride == 5


def test_slab_plan_rejects_gaps_and_bad_starts():
    with pytest.raises(SlabCoverageError):
        SlabPlan(volume_depth=10, slab_depth=3, stride=5, starts=(0, 7))
    with pytest.raises(SlabPlanError):
        SlabPlan(volume_depth=10, slab_depth=3, stride=5, starts=(0, 8))
    with pytest.raises(SlabPlanError):
        enumerate_slabs(10, 4, 0)


def test_draw_slab_start_stays_in_range():
    rng = np.random.default_rng(0)
    starts = {draw_slab_start(10, 4, rng) for _ in range(200)}
    assert starts == set(range(7))
    assert draw_slab_start(10, 4, 3) == draw_slab_start(10, 4, 3)


def test_draw_slab_start_is_uniform():
    """10^4 draws at depth 50, slab 40 spread evenly over the 11 possible starts."""
    rng = np.random.default_rng(2024)
    starts = [draw_slab_start(50, 40, rng) for _ in range(10_000)]

    counts = np.bincount(starts, minlength=11)

    assert len(counts) == 11
    assert stats.chisquare(counts).pvalue > 0.01


def test_sample_training_slab_crops_all_channels():
    subject = constant_subject(shape=(12, 6, 6))
    subject.labelmap.data[:] = np.arange(12)[:, None, None] % 6

    slab = sample_training_slab(subject, 5, seed=7)

    assert slab.shape == (5, 6, 6)
    start = int(slab.labelmap.data[0, 0, 0])
    assert all(v.shape == (5, 6, 6) for v in (*slab.ulf.values(), *slab.hf.values(), slab.bg_mask))
    np.testing.assert_array_equal(slab.labelmap.data[:, 0, 0], (np.arange(5) + start) % 6)


def test_sample_training_slab_rejects_shallow_subject():
    with pytest.raises(SlabPlanError):
        sample_training_slab(constant_subject(shape=(4, 6, 6)), 5, seed=0)


def test_stitch_of_extracted_slabs_is_identity(rng):
    stack = rng.random((3, 23, 5, 4)).astype(np.float32)
    plan = enumerate_slabs(23, 8, 3)

    volumes = stitch(extract_slabs(stack, plan), plan, stack.shape[1:])

    np.testing.assert_allclose(np.stack([v.data for v in volumes]), stack, atol=1e-6)


def test_stitch_averages_overlaps():
    plan = enumerate_slabs(6, 4, 2)
    slabs = [(0, np.zeros((1, 4, 1, 1))), (2, np.ones((1, 4, 1, 1)))]

    (volume,) = stitch(slabs, plan, (6, 1, 1))

    np.testing.assert_allclose(volume.data.ravel(), [0, 0, 0.5, 0.5, 1, 1])


def test_stitch_errors():
    plan = enumerate_slabs(6, 4, 2)
    with pytest.raises(SlabCoverageError):
        stitch([(0, np.zeros((1, 4, 1, 1)))], plan, (6, 1, 1))
    with pytest.raises(ShapeMismatchError):
        stitch([(0, np.zeros((1, 3, 1, 1)))], plan, (6, 1, 1))
    with pytest.raises(ShapeMismatchError):
        SlabAccumulator(plan, (7, 1, 1), channels=1)


@pytest.mark.parametrize("max_workers", [1, 4])
def test_run_slab_inference_matches_sequential(rng, max_workers):
    """Thread count never changes the stitched result."""
    stack = rng.random((3, 20, 4, 4)).astype(np.float32)
    plan = enumerate_slabs(20, 6, 4)

    volumes = run_slab_inference(lambda start, slab: slab[:2] * 0.5, stack, plan, max_workers=max_workers)

    assert len(volumes) == 2
    np.testing.assert_allclose(volumes[1].data, stack[1] * 0.5, atol=1e-6)
