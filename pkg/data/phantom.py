"""
Synthetic paired ULF/HF multi-contrast phantoms with known tissue labelmaps.

A phantom head is a set of nested ellipsoidal shells (scalp, skull, CSF, GM, WM)
with a randomly perturbed boundary, a few deep substructures inside the white
matter and an inferior-anterior "face" lobe of soft tissue where the ULF signal
void is inserted. HF contrasts come from per-class mean intensities times a
smooth multiplicative field; ULF contrasts are degraded copies of the HF ones.
"""
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import ndimage

from core.exceptions import NormalizationStateError
from data.volume import CONTRASTS, NormState, Subject, TissueClass, Volume

DEFAULT_CLASS_MEANS: Dict[str, Dict[str, float]] = {
    # T1 ranks CSF < GM < WM, T2 ranks WM < GM < CSF
    "background": {"T1": 0.0, "T2": 0.0, "FLAIR": 0.0},
    "csf": {"T1": 0.15, "T2": 0.95, "FLAIR": 0.10},
    "gm": {"T1": 0.45, "T2": 0.65, "FLAIR": 0.55},
    "wm": {"T1": 0.75, "T2": 0.40, "FLAIR": 0.40},
    "skull": {"T1": 0.20, "T2": 0.15, "FLAIR": 0.15},
    "scalp": {"T1": 0.90, "T2": 0.55, "FLAIR": 0.70},
}

# Normalized ellipsoid radius at which each shell ends, innermost first
SHELL_RADII: Tuple[Tuple[TissueClass, float], ...] = (
    (TissueClass.WM, 0.50),
    (TissueClass.GM, 0.66),
    (TissueClass.CSF, 0.74),
    (TissueClass.SKULL, 0.84),
    (TissueClass.SCALP, 1.00),
)
VOID_ATTENUATION = (0.0, 0.05)


class PhantomParams(BaseModel):
    """Phantom generation parameters."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    size: int = Field(32, ge=8)
    n_ellipsoids: int = Field(4, ge=0)
    class_means: Dict[str, Dict[str, float]] = Field(default_factory=lambda: DEFAULT_CLASS_MEANS)
    noise_sigma_ulf: float = Field(0.05, ge=0.0)
    blur_sigma_ulf: float = Field(1.0, ge=0.0)
    downsample_factor: int = Field(2, ge=1)
    void_probability: float = Field(0.5, ge=0.0, le=1.0)
    bias_amplitude: float = Field(0.05, ge=0.0, lt=1.0)
    noise_sigma_hf: float = Field(0.005, ge=0.0)

    @field_validator('class_means')
    @classmethod
    def _check_class_means(cls, value: Dict[str, Dict[str, float]]) -> Dict[str, Dict[str, float]]:
        expected = {c.name.lower() for c in TissueClass}
        if set(value) != expected:
            raise ValueError(f"class_means must define exactly {sorted(expected)}")
        for name, means in value.items():
            if set(means) != set(CONTRASTS):
                raise ValueError(f"class_means[{name}] must define {list(CONTRASTS)}")
            if any(not 0.0 <= m <= 1.0 for m in means.values()):
                raise ValueError(f"class_means[{name}] intensities must lie in [0, 1]")
        return value

    @model_validator(mode='after')
    def _check_downsampling(self) -> 'PhantomParams':
        if self.size % self.downsample_factor:
            raise ValueError(f"downsample_factor {self.downsample_factor} must divide size {self.size}")
        return self

    def mean(self, tissue: TissueClass, contrast: str) -> float:
        return self.class_means[tissue.name.lower()][contrast]


def _grid(size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    axis = np.linspace(-1.0, 1.0, size)
    return np.meshgrid(axis, axis, axis, indexing='ij')


def _smooth_field(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    """Zero-mean low-frequency random field scaled to [-1, 1]."""
    field = ndimage.gaussian_filter(rng.standard_normal((size, size, size)), sigma=sigma, mode='wrap')
    field -= field.mean()
    peak = np.abs(field).max()
    return field / peak if peak > 0 else field


def _ellipsoid_radius(z, y, x, center, radii) -> np.ndarray:
    return np.sqrt(((z - center[0]) / radii[0]) ** 2
                   + ((y - center[1]) / radii[1]) ** 2
                   + ((x - center[2]) / radii[2]) ** 2)


def _labelmap(params: PhantomParams, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Six-class labelmap and the face-lobe region (candidate location of the signal void)."""
    z, y, x = _grid(params.size)
    head_radii = np.array([0.78, 0.82, 0.72]) * rng.uniform(0.95, 1.05, size=3)
    head_center = rng.uniform(-0.03, 0.03, size=3)
    wobble = 1.0 + 0.04 * _smooth_field(rng, params.size, sigma=params.size / 8)
    radius = _ellipsoid_radius(z, y, x, head_center, head_radii) * wobble

    labels = np.zeros(radius.shape, dtype=np.int16)
    for tissue, outer in reversed(SHELL_RADII):
        labels[radius < outer] = tissue

    # Deep substructures: alternating ventricles (CSF) and nuclei (GM) inside the white matter
    for k in range(params.n_ellipsoids):
        center = head_center + rng.uniform(-0.18, 0.18, size=3) * head_radii
        radii = rng.uniform(0.06, 0.12, size=3)
        inside = (_ellipsoid_radius(z, y, x, center, radii) < 1.0) & (labels == TissueClass.WM)
        labels[inside] = TissueClass.CSF if k % 2 == 0 else TissueClass.GM

    # Face lobe: soft tissue below and in front of the brain (depth axis is inferior -> superior)
    face_center = head_center + np.array([-0.62, 0.55, 0.0]) * head_radii
    face = _ellipsoid_radius(z, y, x, face_center, np.array([0.28, 0.30, 0.30])) < 1.0
    labels[face & (labels == TissueClass.BACKGROUND)] = TissueClass.SCALP
    face_lobe = face & np.isin(labels, (TissueClass.SCALP, TissueClass.SKULL))
    return labels, face_lobe


def _synthesize_hf(labels: np.ndarray, params: PhantomParams, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    bias = 1.0 + params.bias_amplitude * _smooth_field(rng, params.size, sigma=params.size / 4)
    hf = {}
    for contrast in CONTRASTS:
        lookup = np.array([params.mean(t, contrast) for t in TissueClass])
        image = lookup[labels] * bias
        if params.noise_sigma_hf > 0:
            image = image + rng.normal(0.0, params.noise_sigma_hf, size=image.shape) * (labels > 0)
        hf[contrast] = np.clip(image, 0.0, 1.0).astype(np.float32)
    return hf


def _inferior_region(hf: Volume) -> np.ndarray:
    """Fallback void region for a bare HF volume: inferior-anterior fifth of the foreground."""
    foreground = hf.data > 0.05 * max(float(hf.data.max()), 1e-12)
    if not foreground.any():
        return foreground
    zs, ys, _ = np.nonzero(foreground)
    z_cut = zs.min() + 0.3 * (zs.max() - zs.min())
    y_cut = ys.min() + 0.6 * (ys.max() - ys.min())
    d, h, _ = np.indices(hf.shape, sparse=True)
    return foreground & (d <= z_cut) & (h >= y_cut)


def degrade_to_ulf(hf: Volume, params: PhantomParams, seed: int,
                   void_region: Optional[np.ndarray] = None) -> Volume:
    """
    ULF-like copy of an HF volume:
    clip(upsample(downsample(blur(hf))) + noise, 0, 1), then an optional signal void.

    @param hf: Unit-normalized HF volume
    @param params: Degradation parameters
    @param seed: Noise and void seed
    @param void_region: Boolean region to attenuate. When None, a void is inserted with
        probability params.void_probability in the inferior-anterior part of the foreground.
    @return: Unit-normalized volume of the same shape
    """
    if hf.norm_state is not NormState.UNIT_NORMALIZED:
        raise NormalizationStateError(NormState.UNIT_NORMALIZED.value, hf.norm_state.value)
    rng = np.random.default_rng(seed)

    image = hf.data.astype(np.float64)
    if params.blur_sigma_ulf > 0:
        image = ndimage.gaussian_filter(image, sigma=params.blur_sigma_ulf)

    factor = params.downsample_factor
    if factor > 1:
        if any(n % factor for n in image.shape):
            raise ValueError(f"downsample_factor {factor} must divide volume shape {image.shape}")
        d, h, w = image.shape
        coarse = image.reshape(d // factor, factor, h // factor, factor, w // factor, factor).mean(axis=(1, 3, 5))
        image = ndimage.zoom(coarse, factor, order=1, mode='nearest', grid_mode=True)

    if params.noise_sigma_ulf > 0:
        image = image + rng.normal(0.0, params.noise_sigma_ulf, size=image.shape)
    image = np.clip(image, 0.0, 1.0)

    if void_region is None and params.void_probability > 0 and rng.random() < params.void_probability:
        void_region = _inferior_region(hf)
    if void_region is not None and void_region.any():
        image[void_region] *= rng.uniform(*VOID_ATTENUATION)

    return hf.with_data(image.astype(np.float32), NormState.UNIT_NORMALIZED)


def generate_phantom(params: PhantomParams, seed: int, subject_id: Optional[str] = None) -> Subject:
    """
    Generate one paired phantom subject.

    @param params: Phantom parameters
    @param seed: Seed; equal (params, seed) give bit-identical subjects
    @param subject_id: Id to assign, defaults to phantom_<seed>
    @return: Subject with ULF, HF, labelmap, head mask and (when inserted) the void mask
    """
    rng = np.random.default_rng(seed)
    labels, face_lobe = _labelmap(params, rng)
    hf_arrays = _synthesize_hf(labels, params, rng)
    insert_void = rng.random() < params.void_probability
    void = face_lobe if insert_void else np.zeros_like(face_lobe)

    hf = {c: Volume(hf_arrays[c], norm_state=NormState.UNIT_NORMALIZED) for c in CONTRASTS}
    no_void = params.model_copy(update={'void_probability': 0.0})
    ulf = {}
    for contrast in CONTRASTS:
        ulf[contrast] = degrade_to_ulf(hf[contrast], no_void, seed=int(rng.integers(2 ** 31)),
                                       void_region=void if insert_void else None)

    return Subject(
        subject_id=subject_id or f"phantom_{seed:04d}",
        ulf=ulf,
        hf=hf,
        labelmap=Volume(labels),
        bg_mask=Volume((labels > 0).astype(np.uint8), norm_state=NormState.UNIT_NORMALIZED),
        void_mask=Volume(void.astype(np.uint8), norm_state=NormState.UNIT_NORMALIZED) if insert_void else None,
    )
