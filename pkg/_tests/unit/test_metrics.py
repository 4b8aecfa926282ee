"""Reference metrics, the weighted score and metric reports."""
import math

import numpy as np
import pytest

from core.exceptions import (
    ContrastMismatchError, EmptyMaskError, MissingMaskError, NonFiniteScoreError, NormalizationStateError,
    ShapeMismatchError, ZeroEnergyReferenceError
)
from data.volume import CONTRASTS, Volume
from evaluation.metrics import (
    MetricReport, evaluate_subject, mae, merge_reports, nmse, psnr, save_metric_table, ssim, weighted_score
)
from _tests.fixtures import constant_subject, unit_volume


@pytest.mark.parametrize("components,expected", [
    ((0.832, 23.372, 0.031, 0.063), 3.110),
    ((0.711, 30.416, 0.067, 0.141), 3.719),
])
def test_weighted_score_reference_values(components, expected):
    assert weighted_score(*components) == pytest.approx(expected, abs=1e-3)


def test_weighted_score_rejects_non_finite():
    with pytest.raises(NonFiniteScoreError):
        weighted_score(0.9, math.inf, 0.01, 0.01)


def test_psnr_from_known_mse():
    a = np.zeros((4, 4, 4))
    b = np.full((4, 4, 4), 0.1)
    assert psnr(a, b) == pytest.approx(20.0)
    assert psnr(a, a) == math.inf


def test_nmse_and_mae():
    b = np.random.default_rng(0).random((5, 5, 5)) + 0.1
    assert nmse(2 * b, b) == pytest.approx(1.0)
    assert mae(b + 0.25, b) == pytest.approx(0.25)
    with pytest.raises(ZeroEnergyReferenceError):
        nmse(b, np.zeros_like(b))


def test_ssim_of_identical_volumes_is_one(rng):
    a = rng.random((10, 10, 10))
    assert ssim(a, a) == pytest.approx(1.0)
    assert ssim(a, 1 - a) < 0.5


def test_mask_restricts_the_evaluation_region():
    a = np.zeros((6, 6, 6))
    b = np.zeros((6, 6, 6))
    b[0] = 1.0
    mask = np.zeros((6, 6, 6), dtype=bool)
    mask[3:] = True

    assert mae(a, b, mask) == 0.0
    assert mae(a, b) > 0.0
    with pytest.raises(EmptyMaskError):
        mae(a, b, np.zeros_like(mask))


def test_metric_input_checks():
    with pytest.raises(ShapeMismatchError):
        mae(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))
    with pytest.raises(NormalizationStateError):
        mae(Volume(np.zeros((2, 2, 2))), unit_volume(np.zeros((2, 2, 2))))


def test_evaluate_subject_of_perfect_enhancement():
    subject = constant_subject(shape=(8, 8, 8), value=0.4)

    report = evaluate_subject(subject.hf, subject, subject.bg_mask, subject_id="const", source="oracle")

    assert [e.contrast for e in report.entries] == list(CONTRASTS)
    assert report.psnr_db_masked == math.inf
    assert report.inf_contaminated and report.weighted_masked is None


def test_evaluate_subject_rejects_contrast_mismatch():
    subject = constant_subject()
    with pytest.raises(ContrastMismatchError):
        evaluate_subject({"T1": subject.ulf["T1"]}, subject, subject.bg_mask)


def test_evaluate_subject_requires_head_mask():
    """Masked metrics without a mask would silently equal the unmasked ones."""
    subject = constant_subject()
    with pytest.raises(MissingMaskError):
        evaluate_subject(subject.hf, subject, None, subject_id="const")


def test_aggregations_agree_for_linear_score(phantom_subjects):
    """The weighted score is linear, so per-image and means aggregation give the same value."""
    reports = [evaluate_subject(s, s, s.bg_mask, subject_id=s.subject_id, source="ulf") for s in phantom_subjects]

    means = merge_reports(reports, aggregation="means")
    per_image = merge_reports(reports, aggregation="per_image")

    assert len(means.entries) == 3 * len(phantom_subjects)
    assert means.weighted_masked == pytest.approx(per_image.weighted_masked)
    assert means.subject_ids == sorted(s.subject_id for s in phantom_subjects)


def test_report_files(tmp_path, phantom_subject):
    report = evaluate_subject(phantom_subject, phantom_subject, phantom_subject.bg_mask, source="ulf")

    json_path, csv_path = report.save(tmp_path)
    table_csv, _ = save_metric_table([report], tmp_path)

    assert json_path.name == "metrics_ulf.json" and csv_path.exists() and table_csv.exists()
    assert MetricReport.from_json(json_path.read_text()) == report
