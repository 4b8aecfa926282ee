"""Signal-void detection and hallucination reports."""
import json
import math

import numpy as np
import pytest

from core.exceptions import EmptyMaskError
from data.phantom import generate_phantom
from data.volume import CONTRASTS, Enhancement, Subject
from evaluation.hallucination import (
    HallucinationReport, brain_mask_from_labels, darkest_contrast, detect_signal_void, hallucination_report
)
from _tests.fixtures import unit_volume


def _dice(a: np.ndarray, b: np.ndarray) -> float:
    return 2.0 * np.logical_and(a, b).sum() / (a.sum() + b.sum())


def test_detected_void_overlaps_inserted_void(void_params):
    subject = generate_phantom(void_params, seed=9)

    detected = detect_signal_void(darkest_contrast(subject), brain_mask_from_labels(subject.labelmap),
                                  head_mask=subject.bg_mask)

    assert _dice(detected.data.astype(bool), subject.void_mask.data.astype(bool)) > 0.5


def test_detect_signal_void_degenerate_cases():
    brain = np.zeros((8, 8, 8), dtype=bool)
    brain[3:5, 3:5, 3:5] = True

    bright = detect_signal_void(unit_volume(np.ones((8, 8, 8))), brain)
    dark = detect_signal_void(unit_volume(np.zeros((8, 8, 8))), brain, threshold=0.0)

    assert bright.data.sum() == 0
    assert dark.data.sum() == 0


def _masks(shape=(8, 8, 8)):
    brain = np.zeros(shape, dtype=bool)
    brain[1:4] = True
    void = np.zeros(shape, dtype=bool)
    void[5:7] = True
    return brain, void


def _enhancement(data: np.ndarray, source: str = "trex") -> Enhancement:
    return Enhancement("s0", source, {c: unit_volume(data) for c in CONTRASTS})


@pytest.fixture
def ulf_subject():
    return Subject(subject_id="s0", ulf={c: unit_volume(np.full((8, 8, 8), 0.5)) for c in CONTRASTS})


def test_faithful_void_is_not_flagged(ulf_subject):
    brain, void = _masks()
    data = np.where(brain, 0.6, 0.0)

    report = hallucination_report(_enhancement(data), ulf_subject, brain_mask=brain, void_mask=void)

    assert report.void_voxels == int(void.sum())
    assert all(c.hallucination_ratio == 0.0 for c in report.contrasts)
    assert not report.flagged


def test_filled_void_is_flagged(ulf_subject):
    brain, void = _masks()

    report = hallucination_report(_enhancement(np.full((8, 8, 8), 0.6)), ulf_subject, brain_mask=brain,
                                  void_mask=void, flag_threshold=0.3)

    assert report.contrast("T1").hallucination_ratio == pytest.approx(1.0)
    assert all(c.flagged for c in report.contrasts)
    assert report.flagged


def test_flag_follows_stored_ratio_and_threshold(ulf_subject):
    brain, void = _masks()
    data = np.where(brain, 0.5, 0.0) + np.where(void, 0.15, 0.0)

    report = hallucination_report(_enhancement(data), ulf_subject, brain_mask=brain, void_mask=void,
                                  flag_threshold=0.3)

    for entry in report.contrasts:
        assert entry.hallucination_ratio == pytest.approx(0.3)
        assert entry.flagged == (entry.hallucination_ratio > entry.threshold)


def test_dark_brain_gives_infinite_ratio(ulf_subject):
    brain, void = _masks()
    report = hallucination_report(_enhancement(np.where(void, 0.4, 0.0)), ulf_subject, brain_mask=brain,
                                  void_mask=void)
    assert math.isinf(report.contrast("FLAIR").hallucination_ratio)
    assert json.loads(report.model_dump_json())["contrasts"][0]["hallucination_ratio"] == "inf"


def test_empty_brain_mask_is_rejected(ulf_subject):
    _, void = _masks()
    with pytest.raises(EmptyMaskError):
        hallucination_report(_enhancement(np.zeros((8, 8, 8))), ulf_subject,
                             brain_mask=np.zeros((8, 8, 8), dtype=bool), void_mask=void)


def test_report_files_and_schema(tmp_path, ulf_subject):
    brain, void = _masks()

    report = hallucination_report(_enhancement(np.full((8, 8, 8), 0.3), "cyclegan"), ulf_subject,
                                  brain_mask=brain, void_mask=void, out_dir=tmp_path)

    payload = json.loads((tmp_path / "s0_cyclegan.json").read_text())
    assert (tmp_path / "s0_cyclegan_void.nii.gz").exists()
    assert (tmp_path / "s0_cyclegan.png").exists()
    assert [c["contrast"] for c in payload["contrasts"]] == list(CONTRASTS)
    for entry in payload["contrasts"]:
        assert set(entry) == {"contrast", "void_mean", "brain_mean", "hallucination_ratio", "threshold", "flagged"}
    assert HallucinationReport.model_validate(payload).flagged == report.flagged
