"""Pad-and-crop helpers for networks that need spatial dims divisible by their downsampling factor."""
from typing import Tuple

import torch
import torch.nn.functional as F

Crop = Tuple[int, int, int]


def pad_to_multiple(x: torch.Tensor, multiple: int) -> Tuple[torch.Tensor, Crop]:
    """
    Reflect-pad the three trailing spatial dims of x at their far end up to a multiple.

    Reflection needs the pad to be smaller than the dim; larger pads fall back to edge replication.

    @param x: Tensor of shape (N, C, D, H, W)
    @param multiple: Required divisor of every spatial dim
    @return: (padded tensor, original (D, H, W) to crop back to)
    """
    original = tuple(x.shape[-3:])
    pads = [(-n) % multiple for n in original]
    if not any(pads):
        return x, original

    # F.pad takes (w_lo, w_hi, h_lo, h_hi, d_lo, d_hi)
    pad_spec = (0, pads[2], 0, pads[1], 0, pads[0])
    mode = 'reflect' if all(p < n for p, n in zip(pads, original)) else 'replicate'
    return F.pad(x, pad_spec, mode=mode), original


def crop_to(x: torch.Tensor, shape: Crop) -> torch.Tensor:
    """Crop the three trailing spatial dims back to shape."""
    d, h, w = shape
    return x[..., :d, :h, :w]
