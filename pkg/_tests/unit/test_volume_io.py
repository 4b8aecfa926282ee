"""Volume loading, saving, normalization, masking and splitting."""
from dataclasses import replace

import nibabel as nib
import numpy as np
import pytest

from core.exceptions import (
    ConstantVolumeError, CorruptHeaderError, MissingVolumeError, NonVolumetricPayloadError,
    NormalizationStateError, SplitError, VolumeWriteError
)
from data.phantom import generate_phantom
from data.volume import CONTRASTS, Enhancement, NormState, Volume
from data.volume_io import (
    background_mask, head_mask, list_subjects, load_dataset, load_enhancement, load_split, load_subject, load_volume,
    normalize_intensity, save_enhancement, save_split, save_subject, save_volume, split_dataset
)
from training.validation import baseline_report


def test_load_volume_reads_shape_and_spacing(tmp_path):
    """A 32^3 file with 1 mm spacing loads as a raw (32, 32, 32) volume."""
    path = tmp_path / "cube.nii.gz"
    nib.save(nib.Nifti1Image(np.zeros((32, 32, 32), dtype=np.float32), np.eye(4)), str(path))

    volume = load_volume(path)

    assert volume.shape == (32, 32, 32)
    assert volume.spacing == (1.0, 1.0, 1.0)
    assert volume.norm_state is NormState.RAW


def test_load_volume_errors_are_distinct(tmp_path):
    """Missing file, corrupt header and 4D payload raise different errors."""
    with pytest.raises(MissingVolumeError):
        load_volume(tmp_path / "absent.nii.gz")

    corrupt = tmp_path / "corrupt.nii.gz"
    corrupt.write_bytes(b"definitely not a nifti file")
    with pytest.raises(CorruptHeaderError):
        load_volume(corrupt)

    four_d = tmp_path / "four_d.nii.gz"
    nib.save(nib.Nifti1Image(np.zeros((4, 4, 4, 2), dtype=np.float32), np.eye(4)), str(four_d))
    with pytest.raises(NonVolumetricPayloadError) as exc_info:
        load_volume(four_d)
    assert "non-3D payload" in str(exc_info.value)


def test_save_load_round_trip(tmp_path, rng):
    """Random 8^3 volume survives save/load within 1e-6 with its anisotropic spacing."""
    volume = Volume(rng.random((8, 8, 8)).astype(np.float32), spacing=(1.0, 2.0, 3.0))
    path = tmp_path / "random.nii.gz"

    save_volume(volume, path)
    loaded = load_volume(path)

    assert loaded.shape == volume.shape
    assert loaded.spacing == pytest.approx(volume.spacing)
    np.testing.assert_allclose(loaded.data, volume.data, atol=1e-6)


def test_save_volume_overwrites_and_rejects_missing_directory(tmp_path, rng):
    """Saving over a file replaces it; a missing parent directory is an error."""
    path = tmp_path / "vol.nii.gz"
    save_volume(Volume(np.zeros((4, 4, 4), dtype=np.float32)), path)
    save_volume(Volume(np.ones((4, 4, 4), dtype=np.float32)), path)
    assert load_volume(path).data.min() == 1.0

    with pytest.raises(VolumeWriteError):
        save_volume(Volume(np.zeros((4, 4, 4), dtype=np.float32)), tmp_path / "missing" / "vol.nii.gz")


def test_normalize_intensity_linear_map():
    """{0, 50, 100} with the full percentile window maps to {0, 0.5, 1}."""
    volume = Volume(np.array([0.0, 50.0, 100.0]).reshape(1, 1, 3))

    normalized = normalize_intensity(volume, 0, 100)

    np.testing.assert_allclose(normalized.data.ravel(), [0.0, 0.5, 1.0])
    assert normalized.norm_state is NormState.UNIT_NORMALIZED


def test_normalize_intensity_rejects_constant_and_normalized_input():
    with pytest.raises(ConstantVolumeError) as exc_info:
        normalize_intensity(Volume(np.full((4, 4, 4), 3.0)), 0.5, 99.5)
    assert "constant volume" in str(exc_info.value)

    with pytest.raises(NormalizationStateError):
        normalize_intensity(Volume(np.zeros((2, 2, 2)), norm_state=NormState.UNIT_NORMALIZED))

    with pytest.raises(ValueError):
        normalize_intensity(Volume(np.arange(8.0).reshape(2, 2, 2)), 60, 40)


def test_normalize_intensity_percentile_window(rng):
    """With lo=0.5 / hi=99.5 on 8000 voxels, only the 40 + 40 tail voxels are clipped."""
    volume = Volume(rng.normal(size=(20, 20, 20)))

    data = normalize_intensity(volume, 0.5, 99.5).data

    assert data.min() >= 0.0 and data.max() <= 1.0
    inside = np.count_nonzero((data > 0) & (data < 1))
    assert inside >= 0.99 * data.size


def test_normalize_intensity_idempotent_on_unit_range(rng):
    data = rng.random((6, 6, 6))
    data.flat[0], data.flat[1] = 0.0, 1.0

    normalized = normalize_intensity(Volume(data), 0, 100)

    np.testing.assert_allclose(normalized.data, data, atol=1e-6)


def _ellipsoid(shape, radii):
    grid = np.meshgrid(*[np.arange(n) - (n - 1) / 2 for n in shape], indexing='ij')
    inside = sum((g / r) ** 2 for g, r in zip(grid, radii)) <= 1.0
    return inside.astype(np.float32)


def test_background_mask_matches_ellipsoid_volume():
    """Bright ellipsoid on zero background: mask voxel count within 10% of the analytic volume."""
    radii = (10.0, 12.0, 14.0)
    volume = Volume(_ellipsoid((40, 40, 40), radii), norm_state=NormState.UNIT_NORMALIZED)

    mask = background_mask(volume, threshold=0.5, sigma=1.0)

    analytic = 4.0 / 3.0 * np.pi * np.prod(radii)
    assert mask.shape == volume.shape
    assert abs(mask.data.sum() - analytic) <= 0.1 * analytic


def test_background_mask_edge_cases():
    zeros = Volume(np.zeros((8, 8, 8)), norm_state=NormState.UNIT_NORMALIZED)
    assert background_mask(zeros).data.sum() == 0

    spike = np.zeros((9, 9, 9))
    spike[4, 4, 4] = 1.0
    mask = background_mask(Volume(spike, norm_state=NormState.UNIT_NORMALIZED), threshold=0.999, sigma=1.0)
    assert mask.data.sum() <= 1


def test_background_mask_is_monotone_in_threshold(phantom_subject):
    volume = phantom_subject.ulf["T1"]
    masks = [background_mask(volume, threshold=t).data.astype(bool) for t in (0.02, 0.1, 0.3, 0.6)]

    for looser, tighter in zip(masks, masks[1:]):
        assert not np.any(tighter & ~looser)


def test_split_dataset_sizes_and_determinism():
    ids = [f"s{i:02d}" for i in range(50)]

    first = split_dataset(ids, n_val=5, seed=11)
    second = split_dataset(ids, n_val=5, seed=11)

    assert len(first.train) == 45 and len(first.val) == 5
    assert set(first.train) | set(first.val) == set(ids)
    assert first == second


def test_split_dataset_depends_on_seed():
    ids = [f"phantom_{i:03d}" for i in range(10)]
    val_sets = {split_dataset(ids, n_val=2, seed=seed).val for seed in range(20)}
    assert len(val_sets) > 1


def test_split_dataset_rejects_bad_sizes():
    ids = ["a", "b", "c"]
    for n_val in (0, 3, -1):
        with pytest.raises(SplitError):
            split_dataset(ids, n_val=n_val, seed=0)
    with pytest.raises(SplitError):
        split_dataset(["a", "a", "b"], n_val=1, seed=0)


def test_split_file_round_trip(tmp_path):
    split = split_dataset(["a", "b", "c", "d"], n_val=1, seed=3)
    save_split(split, tmp_path / "split.json")
    assert load_split(tmp_path / "split.json") == split


def test_subject_directory_round_trip(tmp_path, small_params):
    """Phantom subjects written in the dataset layout load back unchanged."""
    subject = generate_phantom(small_params.model_copy(update={'void_probability': 1.0}), seed=4, subject_id="p4")
    save_subject(subject, tmp_path)

    assert list_subjects(tmp_path) == ["p4"]
    loaded = load_subject(tmp_path, "p4", normalization=None)
    for contrast in CONTRASTS:
        np.testing.assert_allclose(loaded.ulf[contrast].data, subject.ulf[contrast].data, atol=1e-6)
        np.testing.assert_allclose(loaded.hf[contrast].data, subject.hf[contrast].data, atol=1e-6)
    np.testing.assert_array_equal(loaded.labelmap.data, subject.labelmap.data)
    np.testing.assert_array_equal(loaded.bg_mask.data, subject.bg_mask.data)
    np.testing.assert_array_equal(loaded.void_mask.data, subject.void_mask.data)
    assert [s.subject_id for s in load_dataset(tmp_path, normalization=None)] == ["p4"]


def test_enhancement_round_trip(tmp_path, phantom_subject):
    enhancement = Enhancement(phantom_subject.subject_id, "trex", dict(phantom_subject.hf))
    save_enhancement(enhancement, tmp_path)

    loaded = load_enhancement(tmp_path, "trex", phantom_subject.subject_id)

    assert loaded.source == "trex"
    np.testing.assert_allclose(loaded.stack(), enhancement.stack(), atol=1e-6)
    assert all(v.norm_state is NormState.UNIT_NORMALIZED for v in loaded.volumes.values())


def test_missing_mask_file_is_synthesized_from_ulf(tmp_path, phantom_subject):
    """A subject saved without mask.nii.gz reloads with a head mask, so masked and unmasked scores differ."""
    save_subject(replace(phantom_subject, bg_mask=None), tmp_path)
    assert not (tmp_path / phantom_subject.subject_id / "mask.nii.gz").exists()

    loaded = load_subject(tmp_path, phantom_subject.subject_id, normalization=None)

    assert loaded.bg_mask is not None
    assert 0 < loaded.bg_mask.data.sum() < loaded.bg_mask.data.size
    np.testing.assert_array_equal(loaded.bg_mask.data, head_mask(loaded.ulf).data)
    report = baseline_report([loaded])
    assert report.weighted_masked != report.weighted_unmasked
    assert report.mae_masked != report.mae_unmasked


def test_head_mask_uses_brightest_contrast():
    """A voxel bright in any single contrast belongs to the head."""
    volumes = {}
    for index, contrast in enumerate(CONTRASTS):
        data = np.zeros((12, 12, 12), dtype=np.float32)
        data[2 + 3 * index:5 + 3 * index, 4:8, 4:8] = 1.0
        volumes[contrast] = Volume(data, norm_state=NormState.UNIT_NORMALIZED)

    mask = head_mask(volumes, threshold=0.5, sigma=0.5).data

    for index in range(len(CONTRASTS)):
        assert mask[3 + 3 * index, 6, 6] == 1
    assert mask[0, 0, 0] == 0
