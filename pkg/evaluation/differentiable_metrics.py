"""
Torch versions of the image-quality metrics, used inside loss functions.

They use the same Gaussian window and boundary handling as evaluation.metrics, so
on the same inputs they agree with the reference values to floating-point precision.
PSNR is capped here instead of becoming infinite.
"""
from typing import Optional

import torch
import torch.nn.functional as F

from core.configuration.metrics_config import MetricsConfig
from core.exceptions import ShapeMismatchError
from evaluation.metrics import SCORE_WEIGHTS


def _check(pred: torch.Tensor, target: torch.Tensor) -> None:
    if pred.shape != target.shape:
        raise ShapeMismatchError(target.shape, pred.shape, "metric tensors")


def _as_5d(x: torch.Tensor) -> torch.Tensor:
    """View (D, H, W), (C, D, H, W) or (N, C, D, H, W) as (N*C, 1, D, H, W)."""
    spatial = x.shape[-3:]
    return x.reshape(-1, 1, *spatial)


def gaussian_kernel1d(sigma: float, radius: int, dtype: torch.dtype, device: torch.device) -> torch.Tensor:
    offsets = torch.arange(-radius, radius + 1, dtype=dtype, device=device)
    kernel = torch.exp(-0.5 * (offsets / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_window(x: torch.Tensor, sigma: float, radius: int) -> torch.Tensor:
    """Separable Gaussian filter over the three spatial dims with mirror (reflect) boundaries."""
    kernel = gaussian_kernel1d(sigma, radius, x.dtype, x.device)
    out = x
    for axis in range(3):
        shape = [1, 1, 1, 1, 1]
        shape[2 + axis] = kernel.numel()
        pad = [0, 0, 0, 0, 0, 0]
        # F.pad order is (w_lo, w_hi, h_lo, h_hi, d_lo, d_hi)
        pad[2 * (2 - axis)] = pad[2 * (2 - axis) + 1] = radius
        mode = 'reflect' if radius < out.shape[2 + axis] else 'replicate'
        out = F.conv3d(F.pad(out, pad, mode=mode), kernel.reshape(shape))
    return out


def ssim_map(pred: torch.Tensor, target: torch.Tensor, sigma: Optional[float] = None,
             radius: Optional[int] = None, data_range: Optional[float] = None) -> torch.Tensor:
    sigma = MetricsConfig.get_ssim_sigma() if sigma is None else sigma
    radius = MetricsConfig.get_ssim_radius() if radius is None else radius
    data_range = MetricsConfig.get_data_range() if data_range is None else data_range
    _check(pred, target)

    a, b = _as_5d(pred), _as_5d(target)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a, mu_b = gaussian_window(a, sigma, radius), gaussian_window(b, sigma, radius)
    var_a = gaussian_window(a * a, sigma, radius) - mu_a ** 2
    var_b = gaussian_window(b * b, sigma, radius) - mu_b ** 2
    cov = gaussian_window(a * b, sigma, radius) - mu_a * mu_b
    values = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return values.reshape(pred.shape)


def ssim(pred: torch.Tensor, target: torch.Tensor, **window) -> torch.Tensor:
    return ssim_map(pred, target, **window).mean()


def mae(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _check(pred, target)
    return (pred - target).abs().mean()


def nmse(pred: torch.Tensor, target: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    _check(pred, target)
    return ((pred - target) ** 2).sum() / (target ** 2).sum().clamp_min(eps)


def psnr_capped(pred: torch.Tensor, target: torch.Tensor, cap: Optional[float] = None,
                data_range: Optional[float] = None) -> torch.Tensor:
    """
    10 * log10(L^2 / max(MSE, L^2 * 10^(-cap / 10))); equals cap for identical inputs.
    """
    cap = MetricsConfig.get_psnr_cap() if cap is None else cap
    data_range = MetricsConfig.get_data_range() if data_range is None else data_range
    _check(pred, target)
    floor = data_range ** 2 * 10 ** (-cap / 10)
    error = ((pred - target) ** 2).mean().clamp_min(floor)
    return 10 * torch.log10(data_range ** 2 / error)


def weighted_score(pred: torch.Tensor, target: torch.Tensor, cap: Optional[float] = None) -> torch.Tensor:
    """Differentiable weighted challenge score with capped PSNR."""
    w_s, w_p, w_m, w_n = SCORE_WEIGHTS
    return (w_s * ssim(pred, target) + w_p * psnr_capped(pred, target, cap)
            + w_m * (1 - mae(pred, target)) + w_n * (1 - nmse(pred, target)))
