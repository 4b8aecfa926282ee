"""Torch metrics against the reference implementation."""
import numpy as np
import pytest
import torch

from evaluation import differentiable_metrics as dm
from evaluation import metrics


@pytest.fixture
def pair(rng):
    a = rng.random((10, 9, 8))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    return a, b


def test_ssim_matches_reference(pair):
    a, b = pair
    expected = metrics.ssim(a, b)
    actual = dm.ssim(torch.from_numpy(a), torch.from_numpy(b)).item()
    assert actual == pytest.approx(expected, abs=1e-9)


def test_elementwise_metrics_match_reference(pair):
    a, b = pair
    ta, tb = torch.from_numpy(a), torch.from_numpy(b)

    assert dm.mae(ta, tb).item() == pytest.approx(metrics.mae(a, b))
    assert dm.nmse(ta, tb).item() == pytest.approx(metrics.nmse(a, b))
    assert dm.psnr_capped(ta, tb, cap=100.0).item() == pytest.approx(metrics.psnr(a, b))


def test_psnr_cap_applies_to_identical_inputs(pair):
    a = torch.from_numpy(pair[0])
    assert dm.psnr_capped(a, a, cap=42.0).item() == pytest.approx(42.0)


def test_weighted_score_matches_reference(pair):
    a, b = pair
    expected = metrics.weighted_score(metrics.ssim(a, b), metrics.psnr(a, b), metrics.mae(a, b), metrics.nmse(a, b))
    actual = dm.weighted_score(torch.from_numpy(a), torch.from_numpy(b), cap=100.0).item()
    assert actual == pytest.approx(expected, abs=1e-6)
