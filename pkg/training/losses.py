"""Loss functions of the segmentation, CycleGAN and T-REX training loops."""
from typing import Optional, Tuple, Union

import torch
import torch.nn.functional as F
from monai.losses import DiceCELoss
from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.exceptions import LabelRangeError, ShapeMismatchError
from data.volume import N_CLASSES
from evaluation import differentiable_metrics as dm
from models.segmentation_model import SegLogits

DICE_SMOOTH = 1e-5
SOBEL_EPS = 1e-6


class CycleLossWeights(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    lambda_cycle_ulf: float = Field(10.0, ge=0.0)
    lambda_cycle_hf: float = Field(10.0, ge=0.0)
    lambda_adv: float = Field(1.0, ge=0.0)
    lambda_paired_max: float = Field(1.0, ge=0.0)
    tau: float = Field(20.0, gt=0.0)


class ContentLossWeights(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    w_l1: float = Field(1.0, ge=0.0)
    w_psnr: float = Field(0.01, ge=0.0)
    w_sobel: float = Field(1.0, ge=0.0)

    @model_validator(mode='after')
    def _check_any(self) -> 'ContentLossWeights':
        if not any((self.w_l1, self.w_psnr, self.w_sobel)):
            raise ValueError("At least one content-loss weight must be positive")
        return self


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(b.shape, a.shape, what)


# Segmentation ----------------------------------------------------------------

def dice_ce_loss(logits: Union[SegLogits, torch.Tensor], labels: torch.Tensor,
                 w_dice: float = 1.0, w_ce: float = 1.0) -> torch.Tensor:
    """
    w_dice * (1 - mean soft Dice over classes) + w_ce * mean voxel cross-entropy.

    @param logits: SegLogits or raw scores, (6, D, H, W) or (N, 6, D, H, W)
    @param labels: Integer labels, (D, H, W) or (N, D, H, W)
    @raises LabelRangeError: labels outside 0..5
    """
    scores = logits.scores if isinstance(logits, SegLogits) else logits
    if scores.dim() == 4:
        scores, labels = scores.unsqueeze(0), labels.unsqueeze(0)
    _same_shape(labels, scores[:, 0], "labelmap vs logits")

    found = set(torch.unique(labels).tolist())
    allowed = set(range(N_CLASSES))
    if not found <= allowed:
        raise LabelRangeError({int(v) for v in found - allowed}, allowed)

    loss = DiceCELoss(to_onehot_y=True, softmax=True, smooth_nr=DICE_SMOOTH, smooth_dr=DICE_SMOOTH,
                      lambda_dice=w_dice, lambda_ce=w_ce)
    return loss(scores, labels.unsqueeze(1).to(scores.dtype))


# CycleGAN --------------------------------------------------------------------

def cycle_loss(original: torch.Tensor, reconstructed: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between an input and its round trip through both generators."""
    _same_shape(reconstructed, original, "cycle reconstruction")
    return (original - reconstructed).abs().mean()


def generator_adversarial_loss(d_fake: torch.Tensor) -> torch.Tensor:
    return ((d_fake - 1) ** 2).mean()


def discriminator_adversarial_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    return 0.5 * ((d_real - 1) ** 2).mean() + 0.5 * (d_fake ** 2).mean()


def adversarial_losses(d_real: torch.Tensor, d_fake: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Least-squares GAN terms.

    @param d_real: Patch scores on real volumes
    @param d_fake: Patch scores on generated volumes
    @return: (generator term mean((D(fake) - 1)^2),
              discriminator term 0.5 * mean((D(real) - 1)^2) + 0.5 * mean(D(fake)^2))
    """
    return generator_adversarial_loss(d_fake), discriminator_adversarial_loss(d_real, d_fake)


def paired_challenge_loss(enhanced: torch.Tensor, hf: torch.Tensor, cap: Optional[float] = None) -> torch.Tensor:
    """Negative differentiable weighted score with PSNR capped (default [METRICS] psnr_cap)."""
    _same_shape(enhanced, hf, "paired slabs")
    return -dm.weighted_score(enhanced, hf, cap)


# T-REX content loss ----------------------------------------------------------

def _sobel_kernels(dtype: torch.dtype, device: torch.device) -> torch.Tensor:
    derivative = torch.tensor([-1.0, 0.0, 1.0], dtype=dtype, device=device)
    smooth = torch.tensor([1.0, 2.0, 1.0], dtype=dtype, device=device)
    kz = torch.einsum('i,j,k->ijk', derivative, smooth, smooth)
    ky = torch.einsum('i,j,k->ijk', smooth, derivative, smooth)
    kx = torch.einsum('i,j,k->ijk', smooth, smooth, derivative)
    return torch.stack([kz, ky, kx]).unsqueeze(1)


def sobel_magnitude(x: torch.Tensor, eps: float = SOBEL_EPS) -> torch.Tensor:
    """sqrt(Gz^2 + Gy^2 + Gx^2 + eps) per channel, edge-replicated borders."""
    flat = x.reshape(-1, 1, *x.shape[-3:])
    gradients = F.conv3d(F.pad(flat, (1, 1, 1, 1, 1, 1), mode='replicate'), _sobel_kernels(x.dtype, x.device))
    return torch.sqrt((gradients ** 2).sum(dim=1) + eps).reshape(x.shape)


def sobel_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference of 3D Sobel gradient magnitudes; blind to constant offsets."""
    _same_shape(pred, target, "sobel inputs")
    return (sobel_magnitude(pred) - sobel_magnitude(target)).abs().mean()


def psnr_term(pred: torch.Tensor, target: torch.Tensor, cap: Optional[float] = None) -> torch.Tensor:
    """-PSNR, capped so identical inputs give -cap."""
    return -dm.psnr_capped(pred, target, cap)


def content_loss(pred: torch.Tensor, target: torch.Tensor, w: ContentLossWeights = ContentLossWeights(),
                 cap: Optional[float] = None) -> torch.Tensor:
    """w_l1 * L1 + w_psnr * psnr_term + w_sobel * sobel_loss; zero-weighted terms are skipped."""
    _same_shape(pred, target, "content loss inputs")
    if not any((w.w_l1, w.w_psnr, w.w_sobel)):
        raise ValueError("At least one content-loss weight must be positive")
    terms = []
    if w.w_l1:
        terms.append(w.w_l1 * (pred - target).abs().mean())
    if w.w_psnr:
        terms.append(w.w_psnr * psnr_term(pred, target, cap))
    if w.w_sobel:
        terms.append(w.w_sobel * sobel_loss(pred, target))
    return torch.stack(terms).sum()
