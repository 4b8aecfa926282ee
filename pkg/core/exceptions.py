# exceptions.py
from typing import Any, Optional, Sequence


class EnhancementError(Exception):
    """
    Base exception class for all enhancement pipeline errors.

    @param message: Error message
    @param subject: Optional name of the file, subject, tensor or phase involved
    @param details: Additional error details
    """

    def __init__(self, message: str, subject: Optional[str] = None, details: Optional[dict] = None):
        self.message = message
        self.subject = subject
        self.details = details or {}
        super().__init__(message)


# Volumes ---------------------------------------------------------------------

class VolumeError(EnhancementError):
    """Base class for volume loading, saving and content errors."""
    pass


class MissingVolumeError(VolumeError):
    """
    Exception raised when a volume file does not exist.

    @param path: Path that was requested
    """

    def __init__(self, path: Any):
        super().__init__(f"Volume file not found: {path}", str(path))


class CorruptHeaderError(VolumeError):
    """
    Exception raised when a volume file cannot be parsed.

    @param path: Offending file
    @param reason: Parser error text
    """

    def __init__(self, path: Any, reason: str):
        super().__init__(f"Corrupt volume header in {path}: {reason}", str(path), {'reason': reason})


class NonVolumetricPayloadError(VolumeError):
    """
    Exception raised when a file holds something other than a 3D grid.

    @param path: Offending file
    @param shape: Shape found in the payload
    """

    def __init__(self, path: Any, shape: Sequence[int]):
        super().__init__(f"non-3D payload in {path}: shape {tuple(shape)}", str(path),
                         {'shape': list(shape)})


class VolumeWriteError(VolumeError):
    """Exception raised when a volume cannot be written to the requested path."""

    def __init__(self, path: Any, reason: str):
        super().__init__(f"Cannot write volume to {path}: {reason}", str(path), {'reason': reason})


class ConstantVolumeError(VolumeError):
    """Exception raised when percentile normalization meets a volume with no intensity spread."""

    def __init__(self, p_lo: float, p_hi: float):
        super().__init__("constant volume", details={'p_lo': p_lo, 'p_hi': p_hi})


class NormalizationStateError(VolumeError):
    """
    Exception raised when an operation receives a volume in the wrong normalization state.

    @param expected: Required state name
    @param actual: State the volume is in
    """

    def __init__(self, expected: str, actual: str):
        super().__init__(f"Expected a {expected} volume, got {actual}",
                         details={'expected': expected, 'actual': actual})


class ShapeMismatchError(VolumeError):
    """
    Exception raised when two arrays that must align have different shapes.

    @param expected: Reference shape
    @param actual: Offending shape
    @param what: Short description of the compared objects
    """

    def __init__(self, expected: Sequence[int], actual: Sequence[int], what: str = "shapes"):
        super().__init__(f"Mismatched {what}: expected {tuple(expected)}, got {tuple(actual)}",
                         what, {'expected': list(expected), 'actual': list(actual)})


class LabelRangeError(VolumeError):
    """Exception raised when a labelmap holds values outside the six tissue classes."""

    def __init__(self, found: Sequence[int], allowed: Sequence[int]):
        super().__init__(f"Label values {sorted(found)} outside allowed set {sorted(allowed)}",
                         details={'found': sorted(found), 'allowed': sorted(allowed)})


class ChannelMismatchError(VolumeError):
    """Exception raised when a network input carries the wrong number of channels."""

    def __init__(self, expected: int, actual: int, what: str = "input"):
        super().__init__(f"Expected {expected} channels for {what}, got {actual}", what,
                         {'expected': expected, 'actual': actual})


# Datasets --------------------------------------------------------------------

class DatasetError(EnhancementError):
    """Base class for dataset content errors."""
    pass


class EmptyDatasetError(DatasetError):
    """Exception raised when an operation needs at least one subject."""

    def __init__(self, what: str = "dataset"):
        super().__init__(f"Empty {what}", what)


class MissingLabelmapError(DatasetError):
    """Exception raised when a subject required for segmentation training has no labelmap."""

    def __init__(self, subject_ids: Sequence[str]):
        super().__init__(f"Subjects without labelmap: {', '.join(subject_ids)}",
                         details={'subjects': list(subject_ids)})


class MissingPairedDataError(DatasetError):
    """Exception raised when paired losses or evaluation need HF volumes that are absent."""

    def __init__(self, subject_ids: Sequence[str]):
        super().__init__(f"Subjects without paired HF volumes: {', '.join(subject_ids)}",
                         details={'subjects': list(subject_ids)})


class SplitError(DatasetError):
    """Exception raised for an impossible train/validation split."""
    pass


# Slabs -----------------------------------------------------------------------

class SlabError(EnhancementError):
    """Base class for slab planning and stitching errors."""
    pass


class SlabPlanError(SlabError):
    """Exception raised for slab parameters that cannot produce a valid plan."""
    pass


class SlabCoverageError(SlabError):
    """Exception raised when stitched slabs leave slices uncovered."""

    def __init__(self, uncovered: Sequence[int]):
        super().__init__(f"Slices not covered by any slab: {list(uncovered)[:10]}",
                         details={'uncovered': list(uncovered)})


# Metrics ---------------------------------------------------------------------

class MetricError(EnhancementError):
    """Base class for metric evaluation errors."""
    pass


class EmptyMaskError(MetricError):
    """Exception raised when a metric or report is restricted to an empty mask."""

    def __init__(self, what: str = "mask"):
        super().__init__(f"Empty {what}", what)


class MissingMaskError(MetricError):
    """Exception raised when masked metrics are requested without a head mask."""

    def __init__(self, subject: str = "subject"):
        super().__init__(f"No head mask for {subject}; masked metrics need one", subject)


class ZeroEnergyReferenceError(MetricError):
    """Exception raised when NMSE is requested against a reference that is zero on the evaluation region."""

    def __init__(self):
        super().__init__("NMSE reference has zero energy on the evaluation region")


class NonFiniteScoreError(MetricError):
    """Exception raised when the weighted score receives non-finite components."""

    def __init__(self, components: dict):
        super().__init__(f"Non-finite weighted score components: {components}", details=components)


class ContrastMismatchError(MetricError):
    """Exception raised when prediction and reference cover different contrasts."""

    def __init__(self, predicted: Sequence[str], reference: Sequence[str]):
        super().__init__(f"Contrast mismatch: predicted {sorted(predicted)} vs reference {sorted(reference)}",
                         details={'predicted': sorted(predicted), 'reference': sorted(reference)})


# Training --------------------------------------------------------------------

class TrainingError(EnhancementError):
    """Base class for training errors."""
    pass


class EmptyScheduleError(TrainingError):
    """Exception raised for a schedule with no epochs."""

    def __init__(self):
        super().__init__("empty schedule")


class FrozenWeightsError(TrainingError):
    """
    Exception raised when the frozen segmentation prior is trainable or has changed.

    @param expected_hash: Hash recorded when the weights were frozen
    @param actual_hash: Hash observed now
    """

    def __init__(self, message: str, expected_hash: Optional[str] = None, actual_hash: Optional[str] = None):
        super().__init__(message, "segmentation", {'expected_hash': expected_hash, 'actual_hash': actual_hash})


class CheckpointError(TrainingError):
    """Exception raised when a checkpoint archive cannot be written or read back."""
    pass


# Ensemble --------------------------------------------------------------------

class EnsembleError(EnhancementError):
    """Base class for ensembling errors."""
    pass


class EmptyPairsError(EnsembleError):
    """Exception raised when the ensemble weight is fitted on no data."""

    def __init__(self):
        super().__init__("Cannot fit ensemble weight on an empty set of pairs")


# Pipeline --------------------------------------------------------------------

class ConfigValidationError(EnhancementError):
    """
    Exception raised when the pipeline configuration fails validation.

    @param message: Summary of the failure
    @param errors: Individual validation errors
    """

    def __init__(self, message: str, errors: Optional[list] = None):
        super().__init__(message, "config", {'errors': errors or []})


class PhaseError(EnhancementError):
    """
    Exception raised when a pipeline phase fails; tags the failure with the phase name.

    @param phase: Phase that failed
    @param cause: Original exception
    """

    def __init__(self, phase: str, cause: BaseException):
        self.phase = phase
        self.cause = cause
        super().__init__(f"[{phase}] {type(cause).__name__}: {cause}", phase,
                         {'cause_type': type(cause).__name__})
