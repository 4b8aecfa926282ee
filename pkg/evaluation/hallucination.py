"""
Signal-void detection and hallucination scoring.

Inside the head but outside the brain, regions where every ULF contrast is dark carry no
anatomy. An enhancement that paints tissue there is hallucinating; the report measures
how bright the enhanced void is relative to the enhanced brain.
"""
import math
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, PrivateAttr, computed_field
from scipy import ndimage

from core.configuration.hallucination_config import HallucinationConfig
from core.exceptions import EmptyMaskError, NormalizationStateError, ShapeMismatchError
from core.logger import Log
from data.volume import BRAIN_CLASSES, CONTRASTS, Enhancement, NormState, Subject, Volume
from data.volume_io import save_volume
from evaluation.metrics import InfFloat
from reports.figures import void_montage


def _mask_array(mask: Optional[Union[Volume, np.ndarray]], shape, what: str) -> Optional[np.ndarray]:
    if mask is None:
        return None
    data = np.asarray(mask.data if isinstance(mask, Volume) else mask).astype(bool)
    if data.shape != tuple(shape):
        raise ShapeMismatchError(shape, data.shape, what)
    return data


def detect_signal_void(ulf: Volume, brain_mask: Union[Volume, np.ndarray], threshold: Optional[float] = None,
                       head_mask: Optional[Union[Volume, np.ndarray]] = None, sigma: Optional[float] = None,
                       opening_iterations: Optional[int] = None) -> Volume:
    """
    Binary signal-void mask.

    void = (smoothed ULF < threshold) outside the brain (and inside the head, when a
    head mask is given), followed by a binary opening.

    @param ulf: Unit-normalized ULF volume
    @param brain_mask: Brain voxels, excluded from the void
    @param threshold: Intensity threshold (default [HALLUCINATION] void_threshold); 0 yields an empty mask
    @param head_mask: Optional head region restricting the candidates
    @param sigma: Gaussian smoothing in voxels (default [HALLUCINATION] smoothing_sigma)
    @param opening_iterations: Binary opening iterations (default [HALLUCINATION] opening_iterations)
    @return: Binary uint8 volume
    """
    if ulf.norm_state is not NormState.UNIT_NORMALIZED:
        raise NormalizationStateError(NormState.UNIT_NORMALIZED.value, ulf.norm_state.value)
    threshold = HallucinationConfig.get_void_threshold() if threshold is None else threshold
    sigma = HallucinationConfig.get_smoothing_sigma() if sigma is None else sigma
    opening_iterations = (HallucinationConfig.get_opening_iterations()
                          if opening_iterations is None else opening_iterations)

    smoothed = ndimage.gaussian_filter(ulf.data.astype(np.float64), sigma) if sigma > 0 else ulf.data
    void = (smoothed < threshold) & ~_mask_array(brain_mask, ulf.shape, "brain mask")
    head = _mask_array(head_mask, ulf.shape, "head mask")
    if head is not None:
        void &= head
    if opening_iterations > 0 and void.any():
        void = ndimage.binary_opening(void, iterations=opening_iterations)
    return Volume(void.astype(np.uint8), spacing=ulf.spacing, norm_state=NormState.UNIT_NORMALIZED)


def darkest_contrast(subject: Subject) -> Volume:
    """Voxelwise maximum over the ULF contrasts: a voxel is dark here only if it is dark in every contrast."""
    stack = subject.stack("ulf")
    reference = subject.ulf[CONTRASTS[0]]
    return reference.with_data(np.clip(stack.max(axis=0), 0.0, 1.0), NormState.UNIT_NORMALIZED)


def brain_mask_from_labels(labelmap: Union[Volume, np.ndarray]) -> np.ndarray:
    data = labelmap.data if isinstance(labelmap, Volume) else np.asarray(labelmap)
    return np.isin(data, [int(c) for c in BRAIN_CLASSES])


def brain_mask_from_probabilities(probs: np.ndarray) -> np.ndarray:
    """Brain voxels of a (6, D, H, W) tissue probability map: those whose most likely class is a brain class."""
    return brain_mask_from_labels(np.asarray(probs).argmax(axis=0))


class ContrastHallucination(BaseModel):
    model_config = ConfigDict(frozen=True)

    contrast: str
    void_mean: float
    brain_mean: float
    hallucination_ratio: InfFloat
    threshold: float

    @computed_field
    @property
    def flagged(self) -> bool:
        return self.hallucination_ratio > self.threshold


class HallucinationReport(BaseModel):
    """Per-contrast void/brain intensity ratios of one enhancement of one subject."""
    subject_id: str
    source: str
    void_voxels: int
    void_mask: Optional[str] = None
    montage: Optional[str] = None
    contrasts: List[ContrastHallucination]

    _void: Optional[Volume] = PrivateAttr(default=None)

    @computed_field
    @property
    def flagged(self) -> bool:
        return any(c.flagged for c in self.contrasts)

    @property
    def void_volume(self) -> Optional[Volume]:
        return self._void

    def contrast(self, name: str) -> ContrastHallucination:
        return next(c for c in self.contrasts if c.contrast == name)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2))
        return path


def _ratio(void_mean: float, brain_mean: float) -> float:
    if brain_mean > 0:
        return void_mean / brain_mean
    return 0.0 if void_mean == 0 else math.inf


def hallucination_report(enhanced: Enhancement, ulf: Subject, brain_mask: Optional[Union[Volume, np.ndarray]] = None,
                         void_mask: Optional[Union[Volume, np.ndarray]] = None,
                         head_mask: Optional[Union[Volume, np.ndarray]] = None,
                         flag_threshold: Optional[float] = None, void_threshold: Optional[float] = None,
                         out_dir: Optional[Union[str, Path]] = None) -> HallucinationReport:
    """
    Hallucination ratios of an enhancement.

    @param enhanced: Enhanced contrasts of the subject
    @param ulf: Subject holding the ULF input (and, when present, labelmap and head mask)
    @param brain_mask: Brain region (default: brain classes of the subject's labelmap)
    @param void_mask: Void region (default: detect_signal_void on the darkest-contrast ULF)
    @param head_mask: Head region for void detection (default: the subject's bg_mask)
    @param flag_threshold: Ratio above which a contrast is flagged (default [HALLUCINATION] flag_threshold)
    @param void_threshold: Intensity threshold for void detection
    @param out_dir: When given, receives <subject>_<source>.json, the void NIfTI and the PNG montage
    @raises EmptyMaskError: empty or missing brain mask
    """
    flag_threshold = HallucinationConfig.get_flag_threshold() if flag_threshold is None else flag_threshold
    shape = ulf.shape
    if brain_mask is None:
        if ulf.labelmap is None:
            raise EmptyMaskError("brain mask (no labelmap and none given)")
        brain = brain_mask_from_labels(ulf.labelmap)
    else:
        brain = _mask_array(brain_mask, shape, "brain mask")
    if not brain.any():
        raise EmptyMaskError("brain mask")

    if void_mask is None:
        head_mask = ulf.bg_mask if head_mask is None else head_mask
        void_mask = detect_signal_void(darkest_contrast(ulf), brain, void_threshold, head_mask)
    void = _mask_array(void_mask, shape, "void mask")

    entries = []
    for contrast in CONTRASTS:
        data = enhanced.volumes[contrast].data
        if data.shape != shape:
            raise ShapeMismatchError(shape, data.shape, f"enhanced {contrast}")
        void_mean = float(data[void].mean()) if void.any() else 0.0
        brain_mean = float(data[brain].mean())
        entries.append(ContrastHallucination(contrast=contrast, void_mean=void_mean, brain_mean=brain_mean,
                                             hallucination_ratio=_ratio(void_mean, brain_mean),
                                             threshold=flag_threshold))

    void_volume = Volume(void.astype(np.uint8), spacing=ulf.ulf[CONTRASTS[0]].spacing,
                         norm_state=NormState.UNIT_NORMALIZED)
    void_path = montage = None
    if out_dir is not None:
        stem = f"{ulf.subject_id}_{enhanced.source}"
        void_path = Path(out_dir) / f"{stem}_void.nii.gz"
        void_path.parent.mkdir(parents=True, exist_ok=True)
        save_volume(void_volume, void_path)
        montage = void_montage(ulf, enhanced, void, Path(out_dir) / f"{stem}.png")

    report = HallucinationReport(subject_id=ulf.subject_id, source=enhanced.source, void_voxels=int(void.sum()),
                                 void_mask=str(void_path) if void_path else None,
                                 montage=str(montage) if montage else None, contrasts=entries)
    report._void = void_volume
    if out_dir is not None:
        report.save(Path(out_dir) / f"{ulf.subject_id}_{enhanced.source}.json")

    flagged = [c.contrast for c in entries if c.flagged]
    Log.info(f"Hallucination {ulf.subject_id}/{enhanced.source}: {int(void.sum())} void voxels, "
             f"ratios {[round(c.hallucination_ratio, 3) for c in entries]}, flagged {flagged or 'none'}")
    return report
