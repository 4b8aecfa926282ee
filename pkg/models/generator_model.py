"""
3D residual CycleGAN generators with optional segmentation conditioning.

Layout: reflection-padded 7^3 stem, two stride-2 downsampling convolutions,
n residual blocks, two trilinear-upsample + convolution stages and a 7^3 head
with a sigmoid. There are no transposed convolutions.

ULF->HF generators are conditioned on the six segmentation probabilities either
by channel concatenation (9 input channels) or by SPADE, which replaces every
normalization layer with one modulated by the probabilities (3 input channels).
"""
from enum import Enum
from typing import Optional, Tuple

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from core.exceptions import ChannelMismatchError, ShapeMismatchError
from data.volume import CONTRASTS, N_CLASSES
from models.padding import crop_to, pad_to_multiple

N_DOWNSAMPLING = 2


class Direction(str, Enum):
    ULF_TO_HF = "ulf_to_hf"
    HF_TO_ULF = "hf_to_ulf"


class ConditioningMode(str, Enum):
    NONE = "none"
    CONCAT = "concat"
    SPADE = "spade"


class GeneratorConfig(BaseModel):
    """
    Generator architecture.

    conditioning_mode defaults to concat for ULF->HF and none for HF->ULF;
    HF->ULF generators never take segmentation input.
    """
    model_config = ConfigDict(frozen=True, extra='forbid', use_enum_values=False)

    direction: Direction = Direction.ULF_TO_HF
    conditioning_mode: ConditioningMode = ConditioningMode.CONCAT
    n_res_blocks: int = Field(9, ge=0)
    base_channels: int = Field(16, ge=1)
    spade_hidden: int = Field(16, ge=1)
    paper_scale: bool = False

    @model_validator(mode='before')
    @classmethod
    def _default_conditioning(cls, values):
        if isinstance(values, dict) and 'conditioning_mode' not in values:
            direction = Direction(values.get('direction', Direction.ULF_TO_HF))
            values = {**values, 'conditioning_mode':
                      ConditioningMode.NONE if direction is Direction.HF_TO_ULF else ConditioningMode.CONCAT}
        return values

    @model_validator(mode='after')
    def _check_channels(self) -> 'GeneratorConfig':
        if self.direction is Direction.HF_TO_ULF and self.conditioning_mode is not ConditioningMode.NONE:
            raise ValueError("hf_to_ulf generators take 3 input channels and no segmentation conditioning")
        if self.direction is Direction.ULF_TO_HF and self.conditioning_mode is ConditioningMode.NONE:
            raise ValueError("ulf_to_hf generators need concat or spade conditioning")
        return self

    @property
    def in_channels(self) -> int:
        if self.conditioning_mode is ConditioningMode.CONCAT:
            return len(CONTRASTS) + N_CLASSES
        return len(CONTRASTS)

    @property
    def out_channels(self) -> int:
        return len(CONTRASTS)

    @property
    def uses_spade(self) -> bool:
        return self.conditioning_mode is ConditioningMode.SPADE

    @classmethod
    def paper(cls, direction: Direction = Direction.ULF_TO_HF,
              conditioning_mode: Optional[ConditioningMode] = None) -> 'GeneratorConfig':
        """Full-size configuration, about 34M trainable parameters in every variant."""
        direction = Direction(direction)
        if direction is Direction.HF_TO_ULF:
            return cls(direction=direction, base_channels=64, paper_scale=True)
        mode = ConditioningMode(conditioning_mode or ConditioningMode.CONCAT)
        # SPADE adds modulation convolutions to every norm; a slightly narrower trunk keeps the budget
        base = 60 if mode is ConditioningMode.SPADE else 64
        return cls(direction=direction, conditioning_mode=mode, base_channels=base, paper_scale=True)


class SPADE(nn.Module):
    """
    Spatially adaptive normalization:
    instance_norm(x) * (1 + gamma(seg)) + beta(seg), gamma and beta being convolutions of the conditioning.
    """

    def __init__(self, channels: int, cond_channels: int = N_CLASSES, hidden: int = 16, eps: float = 1e-5):
        super().__init__()
        self.norm = nn.InstanceNorm3d(channels, affine=False, eps=eps)
        self.shared = nn.Sequential(nn.Conv3d(cond_channels, hidden, kernel_size=3, padding=1), nn.ReLU(inplace=True))
        self.gamma = nn.Conv3d(hidden, channels, kernel_size=3, padding=1)
        self.beta = nn.Conv3d(hidden, channels, kernel_size=3, padding=1)
        self.cond_channels = cond_channels

    def forward(self, x: torch.Tensor, seg_probs: torch.Tensor) -> torch.Tensor:
        if seg_probs.shape[1] != self.cond_channels:
            raise ChannelMismatchError(self.cond_channels, seg_probs.shape[1], "SPADE conditioning")
        if seg_probs.shape[2:] != x.shape[2:]:
            seg_probs = F.interpolate(seg_probs, size=x.shape[2:], mode='nearest')
        if seg_probs.shape[0] != x.shape[0] or seg_probs.shape[2:] != x.shape[2:]:
            raise ShapeMismatchError((x.shape[0], *x.shape[2:]), (seg_probs.shape[0], *seg_probs.shape[2:]),
                                     "SPADE conditioning")
        hidden = self.shared(seg_probs)
        return self.norm(x) * (1 + self.gamma(hidden)) + self.beta(hidden)


def spade_normalize(features: torch.Tensor, seg_probs: torch.Tensor, params: SPADE) -> torch.Tensor:
    """
    Normalize features and modulate them with maps learned from the segmentation probabilities.

    @param features: (N, C, D, H, W) feature tensor
    @param seg_probs: (N, 6, d, h, w) probabilities, resampled (nearest) to the feature grid
    @param params: SPADE module holding the modulation convolutions
    @return: Tensor shaped like features
    """
    return params(features, seg_probs)


def _norm(channels: int, config: GeneratorConfig) -> nn.Module:
    if config.uses_spade:
        return SPADE(channels, hidden=config.spade_hidden)
    return nn.InstanceNorm3d(channels)


def _apply_norm(norm: nn.Module, x: torch.Tensor, seg_probs: Optional[torch.Tensor]) -> torch.Tensor:
    return norm(x, seg_probs) if isinstance(norm, SPADE) else norm(x)


class ConvNormAct(nn.Module):
    def __init__(self, conv: nn.Module, channels: int, config: GeneratorConfig, pre: Optional[nn.Module] = None):
        super().__init__()
        self.pre = pre or nn.Identity()
        self.conv = conv
        self.norm = _norm(channels, config)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x: torch.Tensor, seg_probs: Optional[torch.Tensor] = None) -> torch.Tensor:
        return self.act(_apply_norm(self.norm, self.conv(self.pre(x)), seg_probs))


class ResBlock3d(nn.Module):
    def __init__(self, channels: int, config: GeneratorConfig):
        super().__init__()
        self.pad1 = nn.ReflectionPad3d(1)
        self.conv1 = nn.Conv3d(channels, channels, kernel_size=3)
        self.norm1 = _norm(channels, config)
        self.pad2 = nn.ReflectionPad3d(1)
        self.conv2 = nn.Conv3d(channels, channels, kernel_size=3)
        self.norm2 = _norm(channels, config)

    def forward(self, x: torch.Tensor, seg_probs: Optional[torch.Tensor] = None) -> torch.Tensor:
        out = torch.relu(_apply_norm(self.norm1, self.conv1(self.pad1(x)), seg_probs))
        out = _apply_norm(self.norm2, self.conv2(self.pad2(out)), seg_probs)
        return x + out


class ResnetGenerator3d(nn.Module):
    """Residual encoder-decoder generator; forward(x, seg_probs) with seg_probs required only for SPADE."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        base = config.base_channels

        self.stem = ConvNormAct(nn.Conv3d(config.in_channels, base, kernel_size=7), base, config,
                                pre=nn.ReflectionPad3d(3))
        self.down = nn.ModuleList()
        channels = base
        for _ in range(N_DOWNSAMPLING):
            self.down.append(ConvNormAct(nn.Conv3d(channels, channels * 2, kernel_size=3, stride=2, padding=1),
                                         channels * 2, config))
            channels *= 2

        self.res_blocks = nn.ModuleList(ResBlock3d(channels, config) for _ in range(config.n_res_blocks))

        self.up = nn.ModuleList()
        for _ in range(N_DOWNSAMPLING):
            self.up.append(ConvNormAct(nn.Conv3d(channels, channels // 2, kernel_size=3, padding=1),
                                       channels // 2, config,
                                       pre=nn.Upsample(scale_factor=2, mode='trilinear', align_corners=False)))
            channels //= 2

        self.head = nn.Sequential(
            nn.ReflectionPad3d(3),
            nn.Conv3d(channels, config.out_channels, kernel_size=7),
            nn.Sigmoid(),
        )

    def forward(self, x: torch.Tensor, seg_probs: Optional[torch.Tensor] = None) -> torch.Tensor:
        if x.shape[1] != self.config.in_channels:
            raise ChannelMismatchError(self.config.in_channels, x.shape[1], f"{self.config.direction.value} generator")
        if self.config.uses_spade and seg_probs is None:
            raise ChannelMismatchError(N_CLASSES, 0, "SPADE conditioning")

        x, shape = pad_to_multiple(x, 2 ** N_DOWNSAMPLING)
        if seg_probs is not None:
            seg_probs, _ = pad_to_multiple(seg_probs, 2 ** N_DOWNSAMPLING)

        out = self.stem(x, seg_probs)
        for layer in self.down:
            out = layer(out, seg_probs)
        for block in self.res_blocks:
            out = block(out, seg_probs)
        for layer in self.up:
            out = layer(out, seg_probs)
        return crop_to(self.head(out), shape)


def build_generator(config: GeneratorConfig) -> ResnetGenerator3d:
    return ResnetGenerator3d(config)


def generator_inputs(config: GeneratorConfig, images: torch.Tensor,
                     seg_probs: Optional[torch.Tensor]) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """
    Arrange (images, probabilities) the way a generator of this config consumes them.

    @return: (network input, SPADE conditioning or None)
    """
    if config.conditioning_mode is ConditioningMode.CONCAT:
        return torch.cat([images, seg_probs], dim=1), None
    if config.conditioning_mode is ConditioningMode.SPADE:
        return images, seg_probs
    return images, None
