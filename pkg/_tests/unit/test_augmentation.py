"""Segmentation training augmentation."""
import numpy as np
import pytest
from pydantic import ValidationError

from data.augmentation import AugmentationPolicy, augment


@pytest.fixture
def sample(rng):
    images = rng.random((3, 12, 12, 12)).astype(np.float32)
    labels = rng.integers(0, 6, size=(12, 12, 12)).astype(np.int16)
    return images, labels


def test_augment_keeps_shapes_dtypes_and_label_set(sample):
    images, labels = sample

    out_images, out_labels = augment(sample, AugmentationPolicy(affine_probability=1.0), seed=3)

    assert out_images.shape == images.shape and out_images.dtype == images.dtype
    assert out_labels.shape == labels.shape and out_labels.dtype == labels.dtype
    assert set(np.unique(out_labels)) <= set(range(6))


def test_augment_is_seeded(sample):
    policy = AugmentationPolicy(affine_probability=1.0, flip_probability=1.0)

    first, second = augment(sample, policy, seed=11), augment(sample, policy, seed=11)

    np.testing.assert_array_equal(first[0], second[0])
    np.testing.assert_array_equal(first[1], second[1])


def test_disabled_policy_is_identity(sample):
    images, labels = augment(sample, AugmentationPolicy.disabled(), seed=0)
    assert images is sample[0] and labels is sample[1]


def test_flip_moves_image_and_labels_together(sample):
    images, labels = sample
    policy = AugmentationPolicy(affine_probability=0.0, flip_axes=(2,), flip_probability=1.0,
                                intensity_probability=0.0)

    out_images, out_labels = augment(sample, policy, seed=0)

    np.testing.assert_array_equal(out_images, images[..., ::-1])
    np.testing.assert_array_equal(out_labels, labels[..., ::-1])


def test_policy_rejects_non_spatial_axes():
    with pytest.raises(ValidationError):
        AugmentationPolicy(flip_axes=(3,))
