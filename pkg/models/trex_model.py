"""
T-REX: transformer-bottleneck residual encoder-decoder for paired ULF->HF synthesis.

Encoder stages are convolution blocks separated by stride-2 convolutions. At the
bottleneck every latent voxel becomes one token; a learned positional grid is added
and a pre-norm transformer encoder mixes the tokens before they are projected back
onto the latent grid. Decoder stages upsample trilinearly, pass the matching encoder
features through EDSR residual blocks and merge them by concatenation.
"""
import math
from typing import Tuple

import torch
import torch.nn.functional as F
from einops import rearrange
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from core.exceptions import ChannelMismatchError
from data.volume import CONTRASTS, N_CLASSES
from models.padding import crop_to, pad_to_multiple


class TrexConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    enc_channels: Tuple[int, ...] = (8, 16, 32)
    n_transformer_layers: int = Field(2, ge=1)
    n_heads: int = Field(4, ge=1)
    token_dim: int = Field(32, ge=1)
    mlp_ratio: int = Field(4, ge=1)
    skip_res_blocks: int = Field(1, ge=0)
    res_scale: float = Field(0.1, gt=0.0)
    dropout: float = Field(0.0, ge=0.0, lt=1.0)
    pos_grid: Tuple[int, int, int] = (4, 4, 4)
    paper_scale: bool = False

    @model_validator(mode='after')
    def _check(self) -> 'TrexConfig':
        if len(self.enc_channels) < 2:
            raise ValueError("enc_channels needs at least two stages")
        if self.token_dim % self.n_heads:
            raise ValueError(f"token_dim {self.token_dim} must be divisible by n_heads {self.n_heads}")
        return self

    @property
    def in_channels(self) -> int:
        return len(CONTRASTS) + N_CLASSES

    @property
    def out_channels(self) -> int:
        return len(CONTRASTS)

    @property
    def downsampling(self) -> int:
        return 2 ** (len(self.enc_channels) - 1)

    def latent_shape(self, spatial: Tuple[int, int, int]) -> Tuple[int, int, int]:
        """Bottleneck grid for an input of the given (D, H, W), after internal padding."""
        return tuple(math.ceil(n / self.downsampling) for n in spatial)

    def token_count(self, spatial: Tuple[int, int, int]) -> int:
        return math.prod(self.latent_shape(spatial))

    @classmethod
    def paper(cls) -> 'TrexConfig':
        """Full-size configuration, about 24M trainable parameters."""
        return cls(enc_channels=(32, 64, 128, 256), n_transformer_layers=7, n_heads=8, token_dim=384,
                   skip_res_blocks=2, pos_grid=(5, 8, 8), paper_scale=True)


class ConvBlock(nn.Module):
    """Two 3^3 convolutions with LeakyReLU."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv3d(in_channels, out_channels, kernel_size=3, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv3d(out_channels, out_channels, kernel_size=3, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.block(x)


class EdsrBlock(nn.Module):
    """conv - ReLU - conv with a scaled residual add; no normalization."""

    def __init__(self, channels: int, res_scale: float = 0.1):
        super().__init__()
        self.conv1 = nn.Conv3d(channels, channels, kernel_size=3, padding=1)
        self.relu = nn.ReLU(inplace=True)
        self.conv2 = nn.Conv3d(channels, channels, kernel_size=3, padding=1)
        self.res_scale = res_scale

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.conv2(self.relu(self.conv1(x))) * self.res_scale


class TransformerBottleneck(nn.Module):
    """Tokens = latent voxels; residual transformer encoder over the flattened grid."""

    def __init__(self, channels: int, config: TrexConfig):
        super().__init__()
        self.to_tokens = nn.Linear(channels, config.token_dim)
        self.pos_embedding = nn.Parameter(torch.zeros(1, config.token_dim, *config.pos_grid))
        nn.init.trunc_normal_(self.pos_embedding, std=0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=config.token_dim,
            nhead=config.n_heads,
            dim_feedforward=config.token_dim * config.mlp_ratio,
            dropout=config.dropout,
            activation='gelu',
            batch_first=True,
            norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=config.n_transformer_layers,
                                             norm=nn.LayerNorm(config.token_dim), enable_nested_tensor=False)
        self.from_tokens = nn.Linear(config.token_dim, channels)

    def positions(self, grid: Tuple[int, int, int]) -> torch.Tensor:
        pos = self.pos_embedding
        if tuple(pos.shape[2:]) != tuple(grid):
            pos = F.interpolate(pos, size=grid, mode='trilinear', align_corners=False)
        return rearrange(pos, '1 c d h w -> 1 (d h w) c')

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        d, h, w = x.shape[2:]
        tokens = self.to_tokens(rearrange(x, 'b c d h w -> b (d h w) c')) + self.positions((d, h, w))
        tokens = self.from_tokens(self.encoder(tokens))
        return x + rearrange(tokens, 'b (d h w) c -> b c d h w', d=d, h=h, w=w)


class UpStage(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, skip_blocks: int, res_scale: float):
        super().__init__()
        self.up = nn.Sequential(
            nn.Upsample(scale_factor=2, mode='trilinear', align_corners=False),
            nn.Conv3d(in_channels, out_channels, kernel_size=3, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.skip = nn.Sequential(*[EdsrBlock(out_channels, res_scale) for _ in range(skip_blocks)])
        self.merge = ConvBlock(out_channels * 2, out_channels)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        return self.merge(torch.cat([self.up(x), self.skip(skip)], dim=1))


class Trex(nn.Module):
    def __init__(self, config: TrexConfig):
        super().__init__()
        self.config = config
        channels = config.enc_channels

        self.stem = nn.Conv3d(config.in_channels, channels[0], kernel_size=3, padding=1)
        self.enc_blocks = nn.ModuleList([ConvBlock(channels[0], channels[0])])
        self.downs = nn.ModuleList()
        for c_in, c_out in zip(channels[:-1], channels[1:]):
            self.downs.append(nn.Sequential(nn.Conv3d(c_in, c_out, kernel_size=3, stride=2, padding=1),
                                            nn.LeakyReLU(0.2, inplace=True)))
            self.enc_blocks.append(ConvBlock(c_out, c_out))

        self.bottleneck = TransformerBottleneck(channels[-1], config)

        self.up_stages = nn.ModuleList(
            UpStage(c_in, c_out, config.skip_res_blocks, config.res_scale)
            for c_in, c_out in zip(reversed(channels[1:]), reversed(channels[:-1]))
        )
        self.head = nn.Sequential(nn.Conv3d(channels[0], config.out_channels, kernel_size=1), nn.Sigmoid())

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.config.in_channels:
            raise ChannelMismatchError(self.config.in_channels, x.shape[1], "T-REX input")
        x, shape = pad_to_multiple(x, self.config.downsampling)

        out = self.enc_blocks[0](self.stem(x))
        skips = [out]
        for down, block in zip(self.downs, self.enc_blocks[1:]):
            out = block(down(out))
            skips.append(out)
        skips.pop()

        out = self.bottleneck(out)
        for stage, skip in zip(self.up_stages, reversed(skips)):
            out = stage(out, skip)
        return crop_to(self.head(out), shape)


def build_trex(config: TrexConfig) -> Trex:
    return Trex(config)
