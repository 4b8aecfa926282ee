"""Validation scoring shared by the enhancement trainers."""
import math
from typing import Callable, Optional, Sequence

from core.exceptions import MissingPairedDataError
from data.volume import Enhancement, Subject
from evaluation.metrics import MetricReport, evaluate_subject, merge_reports
from training.inference import baseline_enhancement


def require_pairs(*datasets: Sequence[Subject]) -> None:
    """@raises MissingPairedDataError: some subject has no HF volumes"""
    missing = [s.subject_id for subjects in datasets for s in subjects if not s.has_hf]
    if missing:
        raise MissingPairedDataError(missing)


def validation_report(enhance: Callable[[Subject], Enhancement], subjects: Sequence[Subject], source: str,
                      aggregation: Optional[str] = None) -> MetricReport:
    """Pooled report of enhance(subject) against each subject's HF volumes, masked by its head mask."""
    reports = [evaluate_subject(enhance(s), s, s.bg_mask, s.subject_id, source, aggregation) for s in subjects]
    return merge_reports(reports, source, aggregation)


def baseline_report(subjects: Sequence[Subject], aggregation: Optional[str] = None) -> MetricReport:
    return validation_report(baseline_enhancement, subjects, "ulf", aggregation)


def selection_score(report: MetricReport) -> float:
    """Masked weighted score used for checkpoint selection; an infinite PSNR means a perfect match."""
    if report.weighted_masked is not None:
        return report.weighted_masked
    return math.inf if report.inf_contaminated else -math.inf
