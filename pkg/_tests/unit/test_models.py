"""Network shapes, channel contracts and full-size parameter counts."""
import pytest
import torch
from pydantic import ValidationError

from core.exceptions import ChannelMismatchError
from helpers.torch_helper import count_parameters, seed_everything
from models.discriminator_model import DiscriminatorConfig, build_discriminator
from models.generator_model import (
    SPADE, ConditioningMode, Direction, GeneratorConfig, build_generator, generator_inputs, spade_normalize
)
from models.padding import crop_to, pad_to_multiple
from models.segmentation_model import SegModelConfig, build_segmentation_model, seg_forward
from models.trex_model import TrexConfig, build_trex
from _tests.fixtures import TINY_DISCRIMINATOR, TINY_GENERATOR, TINY_SEG, TINY_TREX


def test_pad_to_multiple_and_crop_back():
    x = torch.rand(1, 2, 5, 8, 3)

    padded, shape = pad_to_multiple(x, 4)

    assert padded.shape == (1, 2, 8, 8, 4)
    assert torch.equal(crop_to(padded, shape), x)


def test_segmentation_logits_shape_and_probs():
    seed_everything(0)
    model = build_segmentation_model(TINY_SEG).eval()

    with torch.no_grad():
        logits = seg_forward(model, torch.rand(3, 16, 12, 10))

    assert logits.scores.shape == (6, 16, 12, 10)
    assert torch.allclose(logits.probs.sum(dim=0), torch.ones(16, 12, 10), atol=1e-5)
    assert logits.labels().shape == (16, 12, 10)


def test_segmentation_rejects_wrong_channels():
    model = build_segmentation_model(TINY_SEG)
    with pytest.raises(ChannelMismatchError):
        seg_forward(model, torch.rand(2, 16, 16, 16))


def test_seg_config_requires_multiple_of_twelve():
    with pytest.raises(ValidationError):
        SegModelConfig(feature_size=16)


@pytest.mark.parametrize("mode", [ConditioningMode.CONCAT, ConditioningMode.SPADE])
def test_ulf_to_hf_generator_shapes(mode):
    config = TINY_GENERATOR.model_copy(update={'conditioning_mode': mode})
    generator = build_generator(config)
    images, probs = torch.rand(1, 3, 8, 10, 12), torch.softmax(torch.rand(1, 6, 8, 10, 12), dim=1)

    out = generator(*generator_inputs(config, images, probs))

    assert config.in_channels == (9 if mode is ConditioningMode.CONCAT else 3)
    assert out.shape == (1, 3, 8, 10, 12)
    assert out.min() >= 0 and out.max() <= 1


def test_generator_has_no_transposed_convolutions():
    generator = build_generator(GeneratorConfig())
    assert not any(isinstance(m, torch.nn.ConvTranspose3d) for m in generator.modules())


def test_generator_channel_contract():
    backward = GeneratorConfig(direction=Direction.HF_TO_ULF, n_res_blocks=1, base_channels=4)
    assert backward.conditioning_mode is ConditioningMode.NONE and backward.in_channels == 3
    with pytest.raises(ValidationError):
        GeneratorConfig(direction=Direction.HF_TO_ULF, conditioning_mode=ConditioningMode.CONCAT)
    with pytest.raises(ChannelMismatchError):
        build_generator(TINY_GENERATOR)(torch.rand(1, 3, 8, 8, 8))
    spade = build_generator(TINY_GENERATOR.model_copy(update={'conditioning_mode': ConditioningMode.SPADE}))
    with pytest.raises(ChannelMismatchError):
        spade(torch.rand(1, 3, 8, 8, 8))


def test_spade_normalize_modulates_standardized_features():
    """With zero modulation convolutions SPADE reduces to instance normalization."""
    params = SPADE(4, hidden=3)
    for conv in (params.gamma, params.beta):
        torch.nn.init.zeros_(conv.weight)
        torch.nn.init.zeros_(conv.bias)
    features = torch.rand(2, 4, 4, 4, 4) * 5 + 2

    out = spade_normalize(features, torch.rand(2, 6, 2, 2, 2), params)

    assert out.shape == features.shape
    assert torch.allclose(out.mean(dim=(2, 3, 4)), torch.zeros(2, 4), atol=1e-5)
    assert torch.allclose(out.std(dim=(2, 3, 4), unbiased=False), torch.ones(2, 4), atol=1e-3)


def test_spade_conditioning_changes_output():
    params = SPADE(4, hidden=3)
    torch.nn.init.constant_(params.shared[0].bias, 1.0)
    features = torch.rand(1, 4, 4, 4, 4)
    a = spade_normalize(features, torch.zeros(1, 6, 4, 4, 4), params)
    b = spade_normalize(features, torch.ones(1, 6, 4, 4, 4), params)
    assert not torch.allclose(a, b)
    with pytest.raises(ChannelMismatchError):
        spade_normalize(features, torch.zeros(1, 5, 4, 4, 4), params)


def test_discriminator_scores_patches():
    discriminator = build_discriminator(6, TINY_DISCRIMINATOR)
    scores = discriminator(torch.rand(2, 6, 8, 16, 16))
    assert scores.shape == (2, 1, 2, 4, 4)
    with pytest.raises(ChannelMismatchError):
        discriminator(torch.rand(1, 3, 8, 8, 8))


def test_trex_shapes_and_token_count():
    network = build_trex(TINY_TREX)

    out = network(torch.rand(1, 9, 7, 10, 12))

    assert out.shape == (1, 3, 7, 10, 12)
    assert out.min() >= 0 and out.max() <= 1
    assert TINY_TREX.latent_shape((7, 10, 12)) == (4, 5, 6)
    assert TINY_TREX.token_count((7, 10, 12)) == 120
    with pytest.raises(ChannelMismatchError):
        network(torch.rand(1, 3, 8, 8, 8))


def test_trex_config_validation():
    with pytest.raises(ValidationError):
        TrexConfig(token_dim=30, n_heads=4)
    with pytest.raises(ValidationError):
        TrexConfig(enc_channels=(8,))


def _within(count: int, millions: float) -> bool:
    return 0.8 * millions * 1e6 <= count <= 1.2 * millions * 1e6


def test_full_size_parameter_counts():
    """Full-size configurations land within 20% of the published sizes."""
    assert _within(count_parameters(build_segmentation_model(SegModelConfig.paper())), 62)
    for mode in (ConditioningMode.CONCAT, ConditioningMode.SPADE):
        assert _within(count_parameters(build_generator(GeneratorConfig.paper(conditioning_mode=mode))), 33)
    assert _within(count_parameters(build_generator(GeneratorConfig.paper(Direction.HF_TO_ULF))), 33)
    assert _within(count_parameters(build_trex(TrexConfig.paper())), 24)
