"""
Axial slab planning, random slab sampling and overlap-averaged stitching.

A slab is a block of consecutive slices along the depth axis. Training draws one
random slab per subject and epoch; inference enhances overlapping slabs on a
stride grid and averages them back into a full volume.
"""
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.configuration.slab_config import SlabConfig
from core.exceptions import ShapeMismatchError, SlabCoverageError, SlabPlanError
from core.logger import Log
from data.volume import NormState, Subject, Volume

SlabOutput = Tuple[int, np.ndarray]


@dataclass(frozen=True)
class SlabPlan:
    """Start indices of the slabs covering a volume of the given depth."""
    volume_depth: int
    slab_depth: int
    stride: int
    starts: Tuple[int, ...]

    def __post_init__(self):
        if any(not 0 <= s <= self.volume_depth - self.slab_depth for s in self.starts):
            raise SlabPlanError(f"Slab starts {self.starts} outside [0, {self.volume_depth - self.slab_depth}]")
        uncovered = np.flatnonzero(self.coverage() == 0)
        if uncovered.size:
            raise SlabCoverageError(uncovered.tolist())

    def coverage(self) -> np.ndarray:
        """Number of slabs covering each slice."""
        counts = np.zeros(self.volume_depth, dtype=np.int64)
        for start in self.starts:
            counts[start:start + self.slab_depth] += 1
        return counts

    def __len__(self) -> int:
        return len(self.starts)


def enumerate_slabs(volume_depth: int, slab_depth: Optional[int] = None, stride: Optional[int] = None) -> SlabPlan:
    """
    Stride-grid slab starts plus an end-aligned tail slab when the grid misses the last slices.

    @param volume_depth: Number of slices
    @param slab_depth: Slices per slab (default from [SLAB] slab_depth)
    @param stride: Distance between consecutive starts (default from [SLAB] stride)
    @return: SlabPlan whose slabs cover every slice
    @raises SlabPlanError: slab deeper than the volume, or non-positive sizes
    """
    slab_depth = SlabConfig.get_slab_depth() if slab_depth is None else slab_depth
    stride = SlabConfig.get_stride() if stride is None else stride
    if stride < 1 or slab_depth < 1:
        raise SlabPlanError(f"slab_depth and stride must be >= 1, got {slab_depth}, {stride}")
    if slab_depth > volume_depth:
        raise SlabPlanError(f"slab_depth {slab_depth} exceeds volume depth {volume_depth}")

    last = volume_depth - slab_depth
    starts = list(range(0, last + 1, stride))
    if starts[-1] != last:
        starts.append(last)
    return SlabPlan(volume_depth=volume_depth, slab_depth=slab_depth, stride=stride, starts=tuple(starts))


def draw_slab_start(volume_depth: int, slab_depth: int, rng: Union[int, np.random.Generator]) -> int:
    """Uniform random slab start in [0, volume_depth - slab_depth]."""
    if slab_depth > volume_depth:
        raise SlabPlanError(f"slab_depth {slab_depth} exceeds volume depth {volume_depth}")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    return int(rng.integers(0, volume_depth - slab_depth + 1))


def sample_training_slab(subject: Subject, slab_depth: int, seed: Union[int, np.random.Generator]) -> Subject:
    """
    Random axial crop of a subject, identical for every contrast, the labelmap and the masks.

    @param subject: Subject to crop
    @param slab_depth: Slices to keep
    @param seed: Seed or generator for the start draw
    @return: Cropped subject view
    @raises SlabPlanError: subject shallower than slab_depth
    """
    start = draw_slab_start(subject.shape[0], slab_depth, seed)
    return subject.crop_depth(start, slab_depth)


def extract_slabs(stack: np.ndarray, plan: SlabPlan) -> List[SlabOutput]:
    """
    Cut a channel-first stack (C, D, H, W) into the plan's slabs.

    @return: (start, slab of shape (C, slab_depth, H, W)) pairs
    """
    if stack.shape[1] != plan.volume_depth:
        raise ShapeMismatchError((plan.volume_depth,), (stack.shape[1],), "stack depth")
    return [(start, stack[:, start:start + plan.slab_depth]) for start in plan.starts]


class SlabAccumulator:
    """
    Running sum and coverage count of slab outputs; add() may be called from several threads.
    """

    def __init__(self, plan: SlabPlan, out_shape: Sequence[int], channels: int):
        self.plan = plan
        self.out_shape = tuple(out_shape)
        if self.out_shape[0] != plan.volume_depth:
            raise ShapeMismatchError((plan.volume_depth,), (self.out_shape[0],), "output depth")
        self._sum = np.zeros((channels, *self.out_shape), dtype=np.float64)
        self._count = np.zeros(self.out_shape[0], dtype=np.int64)
        self._lock = threading.Lock()

    def add(self, start: int, slab: np.ndarray) -> None:
        expected = (self._sum.shape[0], self.plan.slab_depth, *self.out_shape[1:])
        if tuple(slab.shape) != expected:
            raise ShapeMismatchError(expected, slab.shape, f"slab at start {start}")
        if not 0 <= start <= self.plan.volume_depth - self.plan.slab_depth:
            raise SlabPlanError(f"Slab start {start} outside the volume")
        with self._lock:
            self._sum[:, start:start + self.plan.slab_depth] += slab
            self._count[start:start + self.plan.slab_depth] += 1

    def result(self) -> np.ndarray:
        uncovered = np.flatnonzero(self._count == 0)
        if uncovered.size:
            raise SlabCoverageError(uncovered.tolist())
        return (self._sum / self._count[np.newaxis, :, np.newaxis, np.newaxis]).astype(np.float32)


def stitch(slabs: Iterable[SlabOutput], plan: SlabPlan, out_shape: Sequence[int],
           spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)) -> List[Volume]:
    """
    Average overlapping slab outputs into full volumes.

    @param slabs: (start, array of shape (C, slab_depth, H, W)) pairs
    @param plan: Plan the slabs were produced from
    @param out_shape: Full (D, H, W) shape
    @param spacing: Voxel spacing of the output volumes
    @return: One volume per channel; each voxel is the mean of the slab values covering it
    @raises SlabCoverageError: some slice is covered by no slab
    @raises ShapeMismatchError: a slab does not match the plan and out_shape
    """
    slabs = list(slabs)
    if not slabs:
        raise SlabCoverageError(list(range(plan.volume_depth)))
    accumulator = SlabAccumulator(plan, out_shape, channels=slabs[0][1].shape[0])
    for start, slab in slabs:
        accumulator.add(start, np.asarray(slab))
    return [_as_volume(channel, spacing) for channel in accumulator.result()]


def _as_volume(data: np.ndarray, spacing: Tuple[float, float, float]) -> Volume:
    if data.size and data.min() >= 0.0 and data.max() <= 1.0:
        return Volume(data, spacing=spacing, norm_state=NormState.UNIT_NORMALIZED)
    return Volume(data, spacing=spacing)


def run_slab_inference(enhance: Callable[[int, np.ndarray], np.ndarray], stack: np.ndarray, plan: SlabPlan,
                       spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0),
                       max_workers: int = 1) -> List[Volume]:
    """
    Enhance every slab of a stack and stitch the results.

    @param enhance: Callable (start, input slab (C_in, slab_depth, H, W)) -> output slab (C_out, slab_depth, H, W)
    @param stack: Channel-first input (C_in, D, H, W)
    @param plan: Slab plan over D
    @param spacing: Output voxel spacing
    @param max_workers: Threads used for per-slab calls; 1 runs them in order
    @return: One stitched volume per output channel
    """
    inputs = extract_slabs(stack, plan)
    Log.debug(f"Slab inference: {len(plan)} slabs of depth {plan.slab_depth}, stride {plan.stride}")

    if max_workers <= 1:
        outputs = [(start, enhance(start, slab)) for start, slab in inputs]
        return stitch(outputs, plan, stack.shape[1:], spacing)

    first_start, first_slab = inputs[0]
    first = enhance(first_start, first_slab)
    accumulator = SlabAccumulator(plan, stack.shape[1:], channels=first.shape[0])
    accumulator.add(first_start, first)

    def _work(item: SlabOutput) -> None:
        start, slab = item
        accumulator.add(start, enhance(start, slab))

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        list(pool.map(_work, inputs[1:]))
    return [_as_volume(channel, spacing) for channel in accumulator.result()]
