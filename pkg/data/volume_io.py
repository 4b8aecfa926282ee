"""
Load, save, normalize, mask and split volumetric multi-contrast MRI data.

Files are NIfTI-1 (.nii / .nii.gz). In memory a volume is (depth, height, width);
on disk the array is stored in NIfTI (x, y, z) order, i.e. (width, height, depth).

Dataset layout:
    <root>/<subject_id>/ulf/<contrast>.nii.gz
    <root>/<subject_id>/hf/<contrast>.nii.gz      (optional)
    <root>/<subject_id>/labelmap.nii.gz           (optional)
    <root>/<subject_id>/mask.nii.gz               (optional, synthesized from the ULF when absent)
    <root>/<subject_id>/void.nii.gz               (optional, phantoms with an inserted void)
"""
import json
import zlib
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import nibabel as nib
import numpy as np
from nibabel.filebasedimages import ImageFileError
from nibabel.spatialimages import HeaderDataError
from scipy import ndimage

from core.configuration.volume_io_config import VolumeIoConfig
from core.exceptions import (
    ConstantVolumeError, CorruptHeaderError, MissingVolumeError, NonVolumetricPayloadError,
    NormalizationStateError, SplitError, VolumeWriteError
)
from core.logger import Log
from data.volume import CONTRASTS, DatasetSplit, Enhancement, NormState, Subject, Volume

PathLike = Union[str, Path]
VOLUME_SUFFIX = ".nii.gz"
SPLIT_FILE = "split.json"


def load_volume(path: PathLike) -> Volume:
    """
    Load a NIfTI volume.

    @param path: .nii or .nii.gz file
    @return: Volume in raw normalization state, spacing read from the header
    @raises MissingVolumeError: file does not exist
    @raises CorruptHeaderError: file cannot be parsed
    @raises NonVolumetricPayloadError: payload is not 3D
    """
    path = Path(path)
    if not path.is_file():
        raise MissingVolumeError(path)

    try:
        image = nib.load(str(path))
        payload = np.asarray(image.dataobj)
        zooms = tuple(float(z) for z in image.header.get_zooms())
    except (ImageFileError, HeaderDataError, OSError, EOFError, ValueError, zlib.error) as e:
        raise CorruptHeaderError(path, str(e)) from e

    if payload.ndim != 3:
        raise NonVolumetricPayloadError(path, payload.shape)

    if not np.issubdtype(payload.dtype, np.integer):
        payload = payload.astype(np.float32)
    data = np.ascontiguousarray(payload.transpose(2, 1, 0))

    try:
        return Volume(data=data, spacing=(zooms[2], zooms[1], zooms[0]),
                      norm_state=NormState.RAW, affine=image.affine)
    except ValueError as e:
        raise CorruptHeaderError(path, str(e)) from e


def _storage_array(data: np.ndarray) -> np.ndarray:
    if np.issubdtype(data.dtype, np.floating):
        return data.astype(np.float32)
    if data.size and data.min() >= 0 and data.max() < 256:
        return data.astype(np.uint8)
    return data.astype(np.int16)


def save_volume(volume: Volume, path: PathLike) -> None:
    """
    Save a volume as NIfTI-1; intensities are stored as 32-bit floats, labels and masks as integers.
    An existing file is replaced.

    @param volume: Volume to write
    @param path: Target file; its parent directory must exist
    @raises VolumeWriteError: parent directory missing or file not writable
    """
    path = Path(path)
    if not path.parent.is_dir():
        raise VolumeWriteError(path, "parent directory does not exist")

    array = np.ascontiguousarray(_storage_array(volume.data).transpose(2, 1, 0))
    spacing_xyz = (volume.spacing[2], volume.spacing[1], volume.spacing[0])
    affine = volume.affine if volume.affine is not None else np.diag([*spacing_xyz, 1.0])

    image = nib.Nifti1Image(array, affine)
    image.header.set_zooms(spacing_xyz)
    image.header.set_xyzt_units('mm')
    try:
        nib.save(image, str(path))
    except OSError as e:
        raise VolumeWriteError(path, str(e)) from e


def normalize_intensity(volume: Volume, lo_pct: Optional[float] = None, hi_pct: Optional[float] = None) -> Volume:
    """
    Percentile scaling to [0, 1]: clip((x - P_lo) / (P_hi - P_lo), 0, 1).

    @param volume: Raw volume
    @param lo_pct: Lower percentile (default from [VOLUME_IO] lo_pct)
    @param hi_pct: Upper percentile (default from [VOLUME_IO] hi_pct)
    @return: Unit-normalized float32 volume
    @raises ConstantVolumeError: the two percentiles coincide
    """
    lo_pct = VolumeIoConfig.get_lo_pct() if lo_pct is None else lo_pct
    hi_pct = VolumeIoConfig.get_hi_pct() if hi_pct is None else hi_pct
    if volume.norm_state is not NormState.RAW:
        raise NormalizationStateError(NormState.RAW.value, volume.norm_state.value)
    if not 0 <= lo_pct < hi_pct <= 100:
        raise ValueError(f"Percentiles must satisfy 0 <= lo < hi <= 100, got {lo_pct}, {hi_pct}")

    data = volume.data.astype(np.float64)
    p_lo, p_hi = np.percentile(data, [lo_pct, hi_pct])
    if p_hi <= p_lo:
        raise ConstantVolumeError(float(p_lo), float(p_hi))

    scaled = np.clip((data - p_lo) / (p_hi - p_lo), 0.0, 1.0).astype(np.float32)
    return volume.with_data(scaled, NormState.UNIT_NORMALIZED)


def background_mask(volume: Volume, threshold: Optional[float] = None, sigma: Optional[float] = None) -> Volume:
    """
    Foreground (head) mask: 1 where a Gaussian-smoothed copy exceeds threshold * its maximum.

    @param volume: Unit-normalized volume
    @param threshold: Fraction of the smoothed maximum, in (0, 1)
    @param sigma: Smoothing width in voxels
    @return: Binary uint8 volume of the same shape
    """
    threshold = VolumeIoConfig.get_mask_threshold() if threshold is None else threshold
    sigma = VolumeIoConfig.get_mask_sigma() if sigma is None else sigma
    if volume.norm_state is not NormState.UNIT_NORMALIZED:
        raise NormalizationStateError(NormState.UNIT_NORMALIZED.value, volume.norm_state.value)
    if not 0 < threshold < 1:
        raise ValueError(f"Mask threshold must lie in (0, 1), got {threshold}")

    smoothed = ndimage.gaussian_filter(volume.data.astype(np.float64), sigma=sigma)
    peak = float(smoothed.max())
    if peak <= 0:
        mask = np.zeros(volume.shape, dtype=np.uint8)
    else:
        mask = (smoothed > threshold * peak).astype(np.uint8)
    return volume.with_data(mask, NormState.UNIT_NORMALIZED)


def head_mask(ulf: Mapping[str, Volume], threshold: Optional[float] = None, sigma: Optional[float] = None) -> Volume:
    """
    Head mask of a subject without one on disk: background_mask of the voxelwise
    maximum over its unit-normalized ULF contrasts.

    @param ulf: Contrast -> unit-normalized ULF volume
    @param threshold: See background_mask
    @param sigma: See background_mask
    @return: Binary uint8 volume
    """
    volumes = [ulf[c] for c in CONTRASTS if c in ulf] or list(ulf.values())
    brightest = np.max(np.stack([v.data for v in volumes]), axis=0)
    return background_mask(volumes[0].with_data(brightest, NormState.UNIT_NORMALIZED), threshold, sigma)


def split_dataset(subjects: Sequence[Union[Subject, str]], n_val: int, seed: int) -> DatasetSplit:
    """
    Deterministic train/validation partition.

    @param subjects: Subjects (or their ids)
    @param n_val: Number of validation subjects, 0 < n_val < len(subjects)
    @param seed: Permutation seed
    @return: DatasetSplit with ids in sorted order inside each list
    """
    ids = sorted(s.subject_id if isinstance(s, Subject) else str(s) for s in subjects)
    if len(set(ids)) != len(ids):
        raise SplitError("Duplicate subject ids")
    if not 0 < n_val < len(ids):
        raise SplitError(f"n_val must lie in (0, {len(ids)}), got {n_val}")

    order = np.random.default_rng(seed).permutation(len(ids))
    val = sorted(ids[i] for i in order[:n_val])
    train = sorted(ids[i] for i in order[n_val:])
    Log.debug(f"Split seed={seed}: {len(train)} train / {len(val)} val")
    return DatasetSplit(train=tuple(train), val=tuple(val), seed=seed)


def save_split(split: DatasetSplit, path: PathLike) -> None:
    Path(path).write_text(json.dumps(split.to_dict(), indent=2))


def load_split(path: PathLike) -> DatasetSplit:
    return DatasetSplit.from_dict(json.loads(Path(path).read_text()))


# Dataset directory layout -----------------------------------------------------

def _subject_dir(root: PathLike, subject_id: str) -> Path:
    return Path(root) / subject_id


def list_subjects(root: PathLike) -> List[str]:
    """
    Subject ids found under a dataset root (directories holding a ulf/ folder).

    @param root: Dataset root
    @return: Sorted subject ids
    """
    root = Path(root)
    if not root.is_dir():
        return []
    return sorted(p.name for p in root.iterdir() if (p / 'ulf').is_dir())


def _prepare(volume: Volume, normalization: Optional[Tuple[float, float]]) -> Volume:
    if normalization is None:
        return volume.mark_normalized()
    return normalize_intensity(volume, *normalization)


def _load_binary(path: Path) -> Optional[Volume]:
    if not path.is_file():
        return None
    volume = load_volume(path)
    return volume.with_data((volume.data > 0).astype(np.uint8), NormState.UNIT_NORMALIZED)


def load_subject(root: PathLike, subject_id: str,
                 normalization: Optional[Tuple[float, float]] = (0.5, 99.5)) -> Subject:
    """
    Load one subject from the dataset layout.

    @param root: Dataset root
    @param subject_id: Subject directory name
    @param normalization: (lo_pct, hi_pct) for percentile scaling, or None when files already hold [0, 1] data
    @return: Subject with every intensity volume unit-normalized; without mask.nii.gz the
        head mask is synthesized from the ULF contrasts
    """
    subject_dir = _subject_dir(root, subject_id)
    ulf = {c: _prepare(load_volume(subject_dir / 'ulf' / f"{c}{VOLUME_SUFFIX}"), normalization) for c in CONTRASTS}

    hf = None
    if (subject_dir / 'hf').is_dir():
        hf = {c: _prepare(load_volume(subject_dir / 'hf' / f"{c}{VOLUME_SUFFIX}"), normalization) for c in CONTRASTS}

    labelmap = None
    if (subject_dir / f"labelmap{VOLUME_SUFFIX}").is_file():
        raw = load_volume(subject_dir / f"labelmap{VOLUME_SUFFIX}")
        labelmap = raw.with_data(np.rint(raw.data).astype(np.int16))

    bg_mask = _load_binary(subject_dir / f"mask{VOLUME_SUFFIX}")
    if bg_mask is None:
        bg_mask = head_mask(ulf)
        Log.debug(f"{subject_id}: no mask file, head mask synthesized ({int(bg_mask.data.sum())} voxels)")

    return Subject(
        subject_id=subject_id,
        ulf=ulf,
        hf=hf,
        labelmap=labelmap,
        bg_mask=bg_mask,
        void_mask=_load_binary(subject_dir / f"void{VOLUME_SUFFIX}"),
    )


def save_subject(subject: Subject, root: PathLike) -> Path:
    """
    Write a subject in the dataset layout.

    @param subject: Subject to write
    @param root: Dataset root (created if missing)
    @return: Subject directory
    """
    subject_dir = _subject_dir(root, subject.subject_id)
    (subject_dir / 'ulf').mkdir(parents=True, exist_ok=True)
    for contrast, volume in subject.ulf.items():
        save_volume(volume, subject_dir / 'ulf' / f"{contrast}{VOLUME_SUFFIX}")

    if subject.hf is not None:
        (subject_dir / 'hf').mkdir(exist_ok=True)
        for contrast, volume in subject.hf.items():
            save_volume(volume, subject_dir / 'hf' / f"{contrast}{VOLUME_SUFFIX}")

    for name, volume in (("labelmap", subject.labelmap), ("mask", subject.bg_mask), ("void", subject.void_mask)):
        if volume is not None:
            save_volume(volume, subject_dir / f"{name}{VOLUME_SUFFIX}")
    return subject_dir


def load_dataset(root: PathLike, subject_ids: Optional[Iterable[str]] = None,
                 normalization: Optional[Tuple[float, float]] = (0.5, 99.5)) -> List[Subject]:
    """
    Load several subjects, all of them by default.

    @param root: Dataset root
    @param subject_ids: Ids to load, in order; None loads list_subjects(root)
    @param normalization: See load_subject
    @return: Subjects in the requested order
    """
    ids = list(subject_ids) if subject_ids is not None else list_subjects(root)
    Log.debug(f"Loading {len(ids)} subjects from {root}")
    return [load_subject(root, subject_id, normalization) for subject_id in ids]


# Enhanced outputs -------------------------------------------------------------

def save_enhancement(enhancement: Enhancement, root: PathLike) -> Path:
    """
    Write enhanced contrasts as <root>/<source>/<subject_id>/<contrast>.nii.gz.

    @return: Directory holding the contrasts
    """
    directory = Path(root) / enhancement.source / enhancement.subject_id
    directory.mkdir(parents=True, exist_ok=True)
    for contrast, volume in enhancement.volumes.items():
        save_volume(volume, directory / f"{contrast}{VOLUME_SUFFIX}")
    return directory


def load_enhancement(root: PathLike, source: str, subject_id: str) -> Enhancement:
    """
    Read back an enhancement written by save_enhancement.

    @raises MissingVolumeError: a contrast file is missing
    """
    directory = Path(root) / source / subject_id
    volumes = {c: load_volume(directory / f"{c}{VOLUME_SUFFIX}").mark_normalized() for c in CONTRASTS}
    return Enhancement(subject_id=subject_id, source=source, volumes=volumes)
