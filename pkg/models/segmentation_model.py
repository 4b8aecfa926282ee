"""
Six-class tissue segmentation network (shifted-window attention encoder, convolutional decoder).

The network maps the three ULF contrasts to per-voxel tissue logits; once trained
its weights are frozen and its softmax probabilities condition both enhancement networks.
"""
from dataclasses import dataclass
from typing import Tuple

import torch
from monai.networks.nets import SwinUNETR
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from core.exceptions import ChannelMismatchError
from data.volume import CONTRASTS, N_CLASSES
from models.padding import crop_to, pad_to_multiple

# patch embedding (x2) followed by four patch-merging stages (x2 each)
SWIN_DOWNSAMPLING = 32


class SegModelConfig(BaseModel):
    """Segmentation architecture; feature_size must be a multiple of 12."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    feature_size: int = Field(12, ge=12)
    depths: Tuple[int, int, int, int] = (2, 2, 2, 2)
    num_heads: Tuple[int, int, int, int] = (3, 6, 12, 24)
    window_size: int = Field(7, ge=2)
    dropout_path_rate: float = Field(0.0, ge=0.0, lt=1.0)
    paper_scale: bool = False

    @model_validator(mode='after')
    def _check_features(self) -> 'SegModelConfig':
        if self.feature_size % 12:
            raise ValueError(f"feature_size must be divisible by 12, got {self.feature_size}")
        if self.paper_scale and self.feature_size != 48:
            raise ValueError("paper_scale segmentation uses feature_size 48")
        return self

    @classmethod
    def paper(cls) -> 'SegModelConfig':
        """Full-size configuration (about 62M trainable parameters)."""
        return cls(feature_size=48, paper_scale=True)


@dataclass
class SegLogits:
    """Tissue scores with channel axis -4, ordered as TissueClass."""
    scores: torch.Tensor

    def __post_init__(self):
        if self.scores.dim() < 4 or self.scores.shape[-4] != N_CLASSES:
            actual = self.scores.shape[-4] if self.scores.dim() >= 4 else self.scores.dim()
            raise ChannelMismatchError(N_CLASSES, actual, "segmentation logits")

    @property
    def probs(self) -> torch.Tensor:
        return torch.softmax(self.scores, dim=-4)

    def labels(self) -> torch.Tensor:
        return self.scores.argmax(dim=-4)


class SegmentationNet(nn.Module):
    """SwinUNETR wrapped with input checks and reflect pad-and-crop to its downsampling factor."""

    def __init__(self, config: SegModelConfig):
        super().__init__()
        self.config = config
        self.backbone = SwinUNETR(
            in_channels=len(CONTRASTS),
            out_channels=N_CLASSES,
            feature_size=config.feature_size,
            depths=config.depths,
            num_heads=config.num_heads,
            window_size=config.window_size,
            dropout_path_rate=config.dropout_path_rate,
            spatial_dims=3,
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != len(CONTRASTS):
            raise ChannelMismatchError(len(CONTRASTS), x.shape[1], "segmentation input")
        padded, shape = pad_to_multiple(x, SWIN_DOWNSAMPLING)
        return crop_to(self.backbone(padded), shape)


def build_segmentation_model(config: SegModelConfig) -> SegmentationNet:
    return SegmentationNet(config)


def seg_forward(model: nn.Module, ulf_stack: torch.Tensor) -> SegLogits:
    """
    Tissue logits for a ULF stack.

    @param model: Segmentation network
    @param ulf_stack: (3, D, H, W) or (N, 3, D, H, W) tensor
    @return: SegLogits with the input's spatial shape (and batch dim when given)
    @raises ChannelMismatchError: input does not have 3 channels
    """
    unbatched = ulf_stack.dim() == 4
    x = ulf_stack.unsqueeze(0) if unbatched else ulf_stack
    if x.dim() != 5 or x.shape[1] != len(CONTRASTS):
        raise ChannelMismatchError(len(CONTRASTS), x.shape[1] if x.dim() == 5 else x.shape[0], "segmentation input")
    scores = model(x)
    return SegLogits(scores[0] if unbatched else scores)
