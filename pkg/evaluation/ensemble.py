"""
Weighted-average ensembling of two enhancement models.

The weight w multiplies model A (CycleGAN), 1 - w multiplies model B (T-REX). It is
fitted by exhaustive grid search over [0, 1] on a validation set.
"""
import math
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.configuration.ensemble_config import EnsembleConfig
from core.exceptions import EmptyPairsError, MissingMaskError, NormalizationStateError, ShapeMismatchError
from core.logger import Log
from data.volume import CONTRASTS, Enhancement, NormState, Subject, Volume
from evaluation import metrics

Objective = Literal["weighted_masked", "weighted_unmasked"]
ArrayLike = Union[Volume, np.ndarray]
COMBINED_SOURCE = "combined"
TIE_TOLERANCE = 1e-12


class FitPair(NamedTuple):
    """One fitting sample: both model outputs, the reference and the head mask."""
    a: ArrayLike
    b: ArrayLike
    reference: ArrayLike
    mask: Optional[ArrayLike] = None
    contrast: Optional[str] = None


class EnsembleWeight(BaseModel):
    """Fitted ensemble weight with its provenance."""
    model_config = ConfigDict(frozen=True)

    w: float = Field(0.5, ge=0.0, le=1.0)
    fitted_on: str = "validation"
    objective: Objective = "weighted_masked"
    grid_step: Optional[float] = None
    score: Optional[float] = None
    curve: List[Tuple[float, metrics.InfFloat]] = Field(default_factory=list)
    per_contrast: Dict[str, float] = Field(default_factory=dict)
    contrast_curves: Dict[str, List[Tuple[float, metrics.InfFloat]]] = Field(default_factory=dict)

    def weight_for(self, contrast: Optional[str] = None) -> float:
        return self.per_contrast.get(contrast, self.w) if contrast is not None else self.w

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2))
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'EnsembleWeight':
        return cls.model_validate_json(Path(path).read_text())


def _unit(x: ArrayLike, what: str) -> np.ndarray:
    if isinstance(x, Volume):
        if x.norm_state is not NormState.UNIT_NORMALIZED:
            raise NormalizationStateError(NormState.UNIT_NORMALIZED.value, f"{x.norm_state.value} {what}")
        return x.data
    return np.asarray(x)


def _weight(w: Union[EnsembleWeight, float], contrast: Optional[str]) -> float:
    value = w.weight_for(contrast) if isinstance(w, EnsembleWeight) else float(w)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"Ensemble weight must lie in [0, 1], got {value}")
    return value


def combine(a: ArrayLike, b: ArrayLike, w: Union[EnsembleWeight, float], contrast: Optional[str] = None) -> Volume:
    """
    Voxelwise w * a + (1 - w) * b.

    @param a: Model A output (unit-normalized)
    @param b: Model B output (unit-normalized)
    @param w: Weight on a, or an EnsembleWeight (per-contrast weight used when fitted)
    @param contrast: Contrast of a and b, selects a per-contrast weight
    @raises ShapeMismatchError: a and b differ in shape
    @raises NormalizationStateError: a Volume input is not unit-normalized
    """
    data_a, data_b = _unit(a, "model A output"), _unit(b, "model B output")
    if data_a.shape != data_b.shape:
        raise ShapeMismatchError(data_a.shape, data_b.shape, "ensemble inputs")
    value = _weight(w, contrast)
    if value == 1.0:
        combined = data_a
    elif value == 0.0:
        combined = data_b
    else:
        combined = value * data_a.astype(np.float64) + (1.0 - value) * data_b.astype(np.float64)
    combined = np.clip(combined, 0.0, 1.0).astype(np.float32)
    spacing = a.spacing if isinstance(a, Volume) else (1.0, 1.0, 1.0)
    return Volume(combined, spacing=spacing, norm_state=NormState.UNIT_NORMALIZED)


def combine_enhancements(a: Enhancement, b: Enhancement, w: Union[EnsembleWeight, float],
                         source: str = COMBINED_SOURCE) -> Enhancement:
    """Combine two models' enhancements of the same subject, contrast by contrast."""
    if a.subject_id != b.subject_id:
        raise ValueError(f"Cannot combine enhancements of {a.subject_id} and {b.subject_id}")
    return Enhancement(subject_id=a.subject_id, source=source,
                       volumes={c: combine(a.volumes[c], b.volumes[c], w, c) for c in a.volumes})


def grid(grid_step: float) -> np.ndarray:
    """Grid points {0, step, ..., 1}; 1 is always included."""
    if not 0.0 < grid_step <= 0.5:
        raise ValueError(f"grid_step must lie in (0, 0.5], got {grid_step}")
    n = int(math.floor(1.0 / grid_step + 1e-9))
    points = [round(i * grid_step, 12) for i in range(n + 1)]
    if not math.isclose(points[-1], 1.0):
        points.append(1.0)
    return np.asarray(points)


def _pair_score(pair: FitPair, w: float, objective: Objective) -> float:
    pred = combine(pair.a, pair.b, w)
    reference = _unit(pair.reference, "reference")
    mask = None
    if objective == "weighted_masked":
        if pair.mask is None:
            raise MissingMaskError(f"{pair.contrast or 'a'} fitting pair")
        mask = pair.mask
    values = {
        'ssim': metrics.ssim(pred, reference, mask),
        'psnr_db': metrics.psnr(pred, reference, mask),
        'mae': metrics.mae(pred, reference, mask),
        'nmse': metrics.nmse(pred, reference, mask),
    }
    if math.isinf(values['psnr_db']):
        return math.inf
    return metrics.weighted_score(values['ssim'], values['psnr_db'], values['mae'], values['nmse'])


def _search(pairs: Sequence[FitPair], points: np.ndarray, objective: Objective) -> Tuple[float, float, List[Tuple[float, float]]]:
    curve = [(float(w), float(np.mean([_pair_score(p, float(w), objective) for p in pairs]))) for w in points]
    best = max(score for _, score in curve)
    ties = [w for w, score in curve
            if score == best or abs(score - best) <= TIE_TOLERANCE * max(1.0, abs(best))]
    w = min(ties, key=lambda value: (abs(value - 0.5), value))
    return w, best, curve


def fit_weight(pairs: Sequence[FitPair], objective: Optional[Objective] = None, grid_step: Optional[float] = None,
               per_contrast: Optional[bool] = None, fitted_on: str = "validation") -> EnsembleWeight:
    """
    Grid search for the weight maximizing the mean objective over the pairs.

    Ties are broken toward w = 0.5.

    @param pairs: (a, b, reference, mask[, contrast]) fitting samples
    @param objective: weighted_masked or weighted_unmasked (default [ENSEMBLE] objective)
    @param grid_step: Grid resolution in (0, 0.5] (default [ENSEMBLE] grid_step)
    @param per_contrast: Also fit one weight per contrast tag (default [ENSEMBLE] per_contrast)
    @param fitted_on: Dataset identifier stored with the weight
    @return: EnsembleWeight with the score curve
    @raises EmptyPairsError: no pairs
    """
    if not pairs:
        raise EmptyPairsError()
    objective = objective or EnsembleConfig.get_objective()
    grid_step = EnsembleConfig.get_grid_step() if grid_step is None else grid_step
    per_contrast = EnsembleConfig.is_per_contrast() if per_contrast is None else per_contrast
    pairs = [p if isinstance(p, FitPair) else FitPair(*p) for p in pairs]
    points = grid(grid_step)

    w, score, curve = _search(pairs, points, objective)
    contrast_weights, contrast_curves = {}, {}
    if per_contrast:
        groups = defaultdict(list)
        for pair in pairs:
            if pair.contrast is not None:
                groups[pair.contrast].append(pair)
        for contrast, group in sorted(groups.items()):
            contrast_weights[contrast], _, contrast_curves[contrast] = _search(group, points, objective)

    Log.info(f"Ensemble weight fitted on {fitted_on}: w = {w:.3f}, {objective} = {score:.4f}"
             + (f", per contrast {contrast_weights}" if contrast_weights else ""))
    return EnsembleWeight(w=w, fitted_on=fitted_on, objective=objective, grid_step=grid_step,
                          score=score if math.isfinite(score) else None, curve=curve,
                          per_contrast=contrast_weights, contrast_curves=contrast_curves)


def fitting_pairs(a: Sequence[Enhancement], b: Sequence[Enhancement], subjects: Sequence[Subject]) -> List[FitPair]:
    """Per-contrast fitting pairs of two models' enhancements against the subjects' HF volumes."""
    by_id = {s.subject_id: s for s in subjects}
    b_by_id = {e.subject_id: e for e in b}
    pairs = []
    for enhancement in a:
        subject = by_id[enhancement.subject_id]
        other = b_by_id[enhancement.subject_id]
        if subject.bg_mask is None:
            raise MissingMaskError(subject.subject_id)
        mask = subject.bg_mask.data
        for contrast in CONTRASTS:
            pairs.append(FitPair(enhancement.volumes[contrast], other.volumes[contrast], subject.hf[contrast],
                                 mask, contrast))
    return pairs
