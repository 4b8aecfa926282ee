"""Loss functions."""
import math

import pytest
import torch
from pydantic import ValidationError

from core.exceptions import LabelRangeError, ShapeMismatchError
from training.losses import (
    ContentLossWeights, adversarial_losses, content_loss, cycle_loss, dice_ce_loss, paired_challenge_loss,
    psnr_term, sobel_loss, sobel_magnitude
)


def test_dice_ce_loss_is_low_for_confident_correct_logits():
    labels = torch.randint(0, 6, (6, 6, 6), generator=torch.Generator().manual_seed(0))
    right = torch.nn.functional.one_hot(labels, 6).permute(3, 0, 1, 2).float() * 20.0
    wrong = torch.roll(right, shifts=1, dims=0)

    assert dice_ce_loss(right, labels) < 0.05
    assert dice_ce_loss(wrong, labels) > dice_ce_loss(right, labels)


def test_dice_ce_loss_rejects_bad_labels():
    with pytest.raises(LabelRangeError):
        dice_ce_loss(torch.zeros(6, 4, 4, 4), torch.full((4, 4, 4), 6))
    with pytest.raises(ShapeMismatchError):
        dice_ce_loss(torch.zeros(6, 4, 4, 4), torch.zeros(4, 4, 3, dtype=torch.long))


def test_dice_ce_loss_of_uniform_logits_is_ln6():
    """All-zero logits give every class probability 1/6 at every voxel."""
    labels = torch.randint(0, 6, (4, 4, 4), generator=torch.Generator().manual_seed(6))

    ce = dice_ce_loss(torch.zeros(6, 4, 4, 4), labels, w_dice=0.0, w_ce=1.0)

    assert ce.item() == pytest.approx(math.log(6), rel=1e-5)


def test_dice_ce_loss_gradient(double_precision):
    labels = torch.randint(0, 6, (4, 4, 4), generator=torch.Generator().manual_seed(1))
    logits = torch.randn(6, 4, 4, 4, generator=torch.Generator().manual_seed(7)).requires_grad_()
    assert torch.autograd.gradcheck(lambda x: dice_ce_loss(x, labels), (logits,), rtol=1e-3)


def test_cycle_and_adversarial_losses():
    x = torch.rand(1, 3, 4, 4, 4)
    assert cycle_loss(x, x) == 0
    assert cycle_loss(x, x + 0.5) == pytest.approx(0.5)

    g, d = adversarial_losses(torch.ones(1, 1, 2, 2, 2), torch.zeros(1, 1, 2, 2, 2))
    assert g == pytest.approx(1.0) and d == pytest.approx(0.0)


def test_paired_challenge_loss_prefers_the_reference():
    target = torch.rand(1, 3, 8, 8, 8, generator=torch.Generator().manual_seed(2))
    noisy = (target + 0.2 * torch.rand_like(target)).clamp(0, 1)
    assert paired_challenge_loss(target, target) < paired_challenge_loss(noisy, target)


def test_sobel_is_blind_to_constant_offsets():
    x = torch.rand(1, 1, 6, 6, 6, generator=torch.Generator().manual_seed(3))
    assert sobel_loss(x + 0.3, x) == pytest.approx(0.0, abs=1e-5)
    flat = sobel_magnitude(torch.zeros(1, 1, 4, 4, 4))
    assert torch.allclose(flat, torch.full_like(flat, math.sqrt(1e-6)))


def test_content_loss_of_identical_inputs_is_negative_psnr_cap():
    x = torch.rand(1, 3, 6, 6, 6)
    loss = content_loss(x, x, ContentLossWeights(w_l1=1.0, w_psnr=0.01, w_sobel=1.0), cap=50.0)
    assert loss.item() == pytest.approx(-0.5, abs=1e-4)


def test_content_loss_gradient(double_precision):
    target = torch.rand(1, 1, 8, 8, 8, generator=torch.Generator().manual_seed(4))
    pred = torch.rand(1, 1, 8, 8, 8, generator=torch.Generator().manual_seed(5)).requires_grad_()
    assert torch.autograd.gradcheck(lambda p: content_loss(p, target), (pred,), rtol=1e-3)


def test_content_loss_weights_need_one_positive_term():
    with pytest.raises(ValidationError):
        ContentLossWeights(w_l1=0.0, w_psnr=0.0, w_sobel=0.0)


def _pair(shape, seed):
    generator = torch.Generator().manual_seed(seed)
    return torch.rand(shape, generator=generator), torch.rand(shape, generator=generator)


def test_cycle_loss_gradient(double_precision):
    original, reconstructed = _pair((1, 3, 4, 4, 4), 10)
    reconstructed.requires_grad_()
    assert torch.autograd.gradcheck(lambda r: cycle_loss(original, r), (reconstructed,), rtol=1e-3)


def test_adversarial_losses_gradient(double_precision):
    """Both terms, with respect to both patch-score maps."""
    d_real, d_fake = _pair((1, 4, 4, 4), 11)
    assert torch.autograd.gradcheck(adversarial_losses, (d_real.requires_grad_(), d_fake.requires_grad_()),
                                    rtol=1e-3)


def test_paired_challenge_loss_gradient(double_precision):
    """Runs the backward pass through the SSIM windows, PSNR, MAE and NMSE at once."""
    hf, enhanced = _pair((1, 3, 8, 8, 8), 12)
    enhanced.requires_grad_()
    assert torch.autograd.gradcheck(lambda e: paired_challenge_loss(e, hf), (enhanced,), rtol=1e-2, atol=1e-5)


def test_sobel_loss_gradient(double_precision):
    target, pred = _pair((1, 3, 8, 8, 8), 13)
    pred.requires_grad_()
    assert torch.autograd.gradcheck(lambda p: sobel_loss(p, target), (pred,), rtol=1e-3)


def test_psnr_term_value_and_gradient_at_mse_one_hundredth(double_precision):
    target = torch.rand(1, 3, 6, 6, 6, generator=torch.Generator().manual_seed(14))
    signs = (torch.rand(target.shape, generator=torch.Generator().manual_seed(15)) < 0.5).to(target.dtype) * 2 - 1
    pred = (target + 0.1 * signs).requires_grad_()

    assert psnr_term(pred, target).item() == pytest.approx(-20.0, abs=1e-9)
    assert psnr_term(target, target, cap=50.0).item() == pytest.approx(-50.0)
    assert torch.autograd.gradcheck(lambda p: psnr_term(p, target), (pred,), rtol=1e-3)
