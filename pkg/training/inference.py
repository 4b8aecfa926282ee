"""Inference with frozen networks: segmentation conditioning, CycleGAN slabs and T-REX volumes."""
from typing import Optional

import numpy as np
import torch
from torch import nn

from core.configuration.slab_config import SlabConfig
from core.slab_engine import enumerate_slabs, run_slab_inference
from data.volume import CONTRASTS, Enhancement, Subject, Volume
from helpers.torch_helper import to_batch
from models.generator_model import generator_inputs
from models.segmentation_model import seg_forward

ULF_SOURCE = "ulf"


def model_device(model: nn.Module) -> torch.device:
    parameter = next(model.parameters(), None)
    return parameter.device if parameter is not None else torch.device('cpu')


@torch.no_grad()
def segmentation_probs(seg_model: nn.Module, ulf: torch.Tensor) -> torch.Tensor:
    """Softmax tissue probabilities (N, 6, D, H, W) of a batched ULF tensor; never tracks gradients."""
    seg_model.eval()
    return seg_forward(seg_model, ulf).probs


def _slab_depth(subject: Subject, slab_depth: Optional[int]) -> int:
    slab_depth = SlabConfig.get_slab_depth() if slab_depth is None else slab_depth
    return min(slab_depth, subject.shape[0])


def _enhancement(subject: Subject, source: str, volumes) -> Enhancement:
    return Enhancement(subject_id=subject.subject_id, source=source, volumes=dict(zip(CONTRASTS, volumes)))


def _spacing(subject: Subject):
    return subject.ulf[CONTRASTS[0]].spacing


@torch.no_grad()
def infer_cyclegan(generator: nn.Module, seg_model: nn.Module, subject: Subject, slab_depth: Optional[int] = None,
                   stride: Optional[int] = None, per_slab_conditioning: bool = True,
                   max_workers: int = 1, source: str = "cyclegan") -> Enhancement:
    """
    Enhance a subject slab by slab with the ULF->HF generator and stitch the slabs.

    @param generator: ULF->HF generator; its config decides how the probabilities are fed
    @param seg_model: Frozen segmentation prior
    @param subject: Unit-normalized subject
    @param slab_depth: Slab depth (default [SLAB] slab_depth, clipped to the volume depth)
    @param stride: Slab stride (default [SLAB] stride)
    @param per_slab_conditioning: Recompute probabilities from each slab; False crops full-volume probabilities
    @param max_workers: Threads for per-slab calls
    @return: Enhancement with one volume per contrast, same shape as the input
    """
    device = model_device(generator)
    generator.eval()
    stack = subject.stack("ulf")
    plan = enumerate_slabs(stack.shape[1], _slab_depth(subject, slab_depth), stride)

    full_probs = None
    if not per_slab_conditioning:
        full_probs = segmentation_probs(seg_model, to_batch(stack, device))

    def enhance(start: int, slab: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            x = to_batch(slab, device)
            if full_probs is None:
                probs = segmentation_probs(seg_model, x)
            else:
                probs = full_probs[:, :, start:start + plan.slab_depth]
            inputs, condition = generator_inputs(generator.config, x, probs)
            return generator(inputs, condition)[0].float().cpu().numpy()

    return _enhancement(subject, source, run_slab_inference(enhance, stack, plan, _spacing(subject), max_workers))


@torch.no_grad()
def infer_trex(network: nn.Module, seg_model: nn.Module, subject: Subject, slab_depth: Optional[int] = None,
               stride: Optional[int] = None, whole_volume: Optional[bool] = None,
               source: str = "trex") -> Enhancement:
    """
    Enhance a subject with T-REX.

    @param whole_volume: Run the whole volume in one pass; None picks it when the depth fits in one slab
    @return: Enhancement with one volume per contrast, same shape as the input
    """
    device = model_device(network)
    network.eval()
    stack = subject.stack("ulf")
    depth = _slab_depth(subject, slab_depth)
    if whole_volume is None:
        whole_volume = subject.shape[0] <= depth

    def enhance(_start: int, slab: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            x = to_batch(slab, device)
            inputs = torch.cat([x, segmentation_probs(seg_model, x)], dim=1)
            return network(inputs)[0].float().cpu().numpy()

    if whole_volume:
        out = enhance(0, stack)
        volumes = [Volume(channel, spacing=_spacing(subject)).mark_normalized() for channel in out]
        return _enhancement(subject, source, volumes)
    plan = enumerate_slabs(stack.shape[1], depth, stride)
    return _enhancement(subject, source, run_slab_inference(enhance, stack, plan, _spacing(subject)))


def baseline_enhancement(subject: Subject) -> Enhancement:
    """The raw ULF input scored as if it were an enhancement."""
    return Enhancement(subject_id=subject.subject_id, source=ULF_SOURCE, volumes=dict(subject.ulf))
