"""3D patch discriminators shared by the CycleGAN and the T-REX conditional GAN."""
import torch
from pydantic import BaseModel, ConfigDict, Field
from torch import nn

from core.exceptions import ChannelMismatchError


class DiscriminatorConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    base_channels: int = Field(16, ge=1)
    n_layers: int = Field(3, ge=1)


class PatchDiscriminator3d(nn.Module):
    """
    Stack of stride-2 4^3 convolutions with LeakyReLU (instance norm after the first),
    ending in a 3^3 convolution to one score per patch.
    """

    def __init__(self, in_channels: int, config: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.in_channels = in_channels
        layers = [nn.Conv3d(in_channels, config.base_channels, kernel_size=4, stride=2, padding=1),
                  nn.LeakyReLU(0.2, inplace=True)]
        channels = config.base_channels
        for _ in range(config.n_layers - 1):
            layers += [nn.Conv3d(channels, channels * 2, kernel_size=4, stride=2, padding=1),
                       nn.InstanceNorm3d(channels * 2),
                       nn.LeakyReLU(0.2, inplace=True)]
            channels *= 2
        layers.append(nn.Conv3d(channels, 1, kernel_size=3, padding=1))
        self.model = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.in_channels:
            raise ChannelMismatchError(self.in_channels, x.shape[1], "discriminator input")
        return self.model(x)


def build_discriminator(in_channels: int, config: DiscriminatorConfig = DiscriminatorConfig()) -> PatchDiscriminator3d:
    return PatchDiscriminator3d(in_channels, config)
