"""Spatial and intensity augmentation for segmentation training samples."""
from typing import Tuple

import numpy as np
from monai.transforms import (
    Compose, RandAffined, RandFlipd, RandScaleIntensityd, RandShiftIntensityd
)
from monai.utils import convert_to_numpy
from pydantic import BaseModel, ConfigDict, Field, field_validator

IMAGE_KEY = "image"
LABEL_KEY = "label"


class AugmentationPolicy(BaseModel):
    """
    Random augmentation settings.

    Affine ranges are symmetric: rotation in radians, scale as a fraction around 1,
    translation in voxels. Intensity jitter applies to images only.
    """
    model_config = ConfigDict(frozen=True, extra='forbid')

    enabled: bool = True
    rotate_range: float = Field(0.15, ge=0.0)
    scale_range: float = Field(0.04, ge=0.0, lt=1.0)
    translate_range: float = Field(2.0, ge=0.0)
    affine_probability: float = Field(0.5, ge=0.0, le=1.0)
    flip_axes: Tuple[int, ...] = (2,)
    flip_probability: float = Field(0.5, ge=0.0, le=1.0)
    intensity_scale: float = Field(0.1, ge=0.0)
    intensity_shift: float = Field(0.05, ge=0.0)
    intensity_probability: float = Field(0.5, ge=0.0, le=1.0)

    @field_validator('flip_axes')
    @classmethod
    def _check_axes(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(axis not in (0, 1, 2) for axis in value):
            raise ValueError(f"flip_axes must be spatial axes 0, 1 or 2, got {value}")
        return tuple(sorted(set(value)))

    @classmethod
    def disabled(cls) -> 'AugmentationPolicy':
        return cls(enabled=False)

    def build(self) -> Compose:
        """MONAI transform chain for dictionaries holding an image (C, D, H, W) and a label (1, D, H, W)."""
        both = [IMAGE_KEY, LABEL_KEY]
        transforms = []
        if self.affine_probability > 0 and (self.rotate_range or self.scale_range or self.translate_range):
            transforms.append(RandAffined(
                keys=both,
                prob=self.affine_probability,
                rotate_range=(self.rotate_range,) * 3,
                scale_range=(self.scale_range,) * 3,
                translate_range=(self.translate_range,) * 3,
                mode=("bilinear", "nearest"),
                padding_mode="zeros",
            ))
        # One flip transform per axis so axes flip independently
        for axis in self.flip_axes:
            if self.flip_probability > 0:
                transforms.append(RandFlipd(keys=both, prob=self.flip_probability, spatial_axis=axis))
        if self.intensity_probability > 0:
            if self.intensity_scale > 0:
                transforms.append(RandScaleIntensityd(keys=IMAGE_KEY, factors=self.intensity_scale,
                                                      prob=self.intensity_probability))
            if self.intensity_shift > 0:
                transforms.append(RandShiftIntensityd(keys=IMAGE_KEY, offsets=self.intensity_shift,
                                                      prob=self.intensity_probability))
        return Compose(transforms)


def augment(sample: Tuple[np.ndarray, np.ndarray], policy: AugmentationPolicy,
            seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Apply one random draw of the policy to an image stack and its labelmap.

    The spatial transform is shared: images are resampled trilinearly, the labelmap
    with nearest neighbour. Intensity perturbations touch images only.

    @param sample: (ulf_stack of shape (3, D, H, W), labelmap of shape (D, H, W))
    @param policy: Augmentation settings
    @param seed: Random state for this draw
    @return: Augmented (ulf_stack, labelmap), same shapes and dtypes as the input
    """
    images, labels = sample
    if not policy.enabled:
        return images, labels

    transform = policy.build()
    transform.set_random_state(seed=seed)
    out = transform({IMAGE_KEY: images.astype(np.float32), LABEL_KEY: labels[np.newaxis].astype(np.float32)})

    augmented_images = convert_to_numpy(out[IMAGE_KEY]).astype(images.dtype)
    augmented_labels = np.rint(convert_to_numpy(out[LABEL_KEY])[0]).astype(labels.dtype)
    return augmented_images, augmented_labels
