"""
Reference image-quality metrics and the weighted challenge score.

All metrics accept unit-normalized Volumes or plain arrays and an optional binary
mask. Masked SSIM averages the full-volume SSIM map over the mask; the other
metrics are computed on the voxels inside the mask.

Weighted score: 0.7 * SSIM + 0.1 * PSNR + 0.1 * (1 - MAE) + 0.1 * (1 - NMSE).
"""
import json
import math
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, BeforeValidator, ConfigDict, PlainSerializer
from scipy import ndimage

from core.configuration.metrics_config import MetricsConfig
from core.exceptions import (
    ContrastMismatchError, EmptyMaskError, MissingMaskError, NonFiniteScoreError, NormalizationStateError,
    ShapeMismatchError, ZeroEnergyReferenceError
)
from data.volume import CONTRASTS, NormState, Subject, Volume

ArrayLike = Union[Volume, np.ndarray]
SCORE_WEIGHTS = (0.7, 0.1, 0.1, 0.1)
METRIC_NAMES = ("ssim", "psnr_db", "mae", "nmse")
Aggregation = Literal["means", "per_image"]


def _array(x: ArrayLike) -> np.ndarray:
    if isinstance(x, Volume):
        if x.norm_state is not NormState.UNIT_NORMALIZED:
            raise NormalizationStateError(NormState.UNIT_NORMALIZED.value, x.norm_state.value)
        return x.data.astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def _pair(a: ArrayLike, b: ArrayLike, mask: Optional[ArrayLike]) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    a, b = _array(a), _array(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(b.shape, a.shape, "metric inputs")
    if mask is None:
        return a, b, None
    m = (mask.data if isinstance(mask, Volume) else np.asarray(mask)) > 0
    if m.shape != a.shape:
        raise ShapeMismatchError(a.shape, m.shape, "metric mask")
    if not m.any():
        raise EmptyMaskError("metric mask")
    return a, b, m


def _restrict(a: np.ndarray, b: np.ndarray, m: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    return (a, b) if m is None else (a[m], b[m])


def ssim_map(a: ArrayLike, b: ArrayLike, sigma: Optional[float] = None, radius: Optional[int] = None,
             data_range: Optional[float] = None) -> np.ndarray:
    """
    Local SSIM with a normalized 3D Gaussian window (mirror boundary), population statistics.

    @param sigma: Window width (default [METRICS] ssim_sigma)
    @param radius: Window half-width; support is (2 * radius + 1)^3 (default [METRICS] ssim_radius)
    @param data_range: L in C1 = (0.01 L)^2, C2 = (0.03 L)^2 (default [METRICS] data_range)
    @return: SSIM map with the input shape
    """
    sigma = MetricsConfig.get_ssim_sigma() if sigma is None else sigma
    radius = MetricsConfig.get_ssim_radius() if radius is None else radius
    data_range = MetricsConfig.get_data_range() if data_range is None else data_range
    a, b, _ = _pair(a, b, None)

    def window(x: np.ndarray) -> np.ndarray:
        return ndimage.gaussian_filter(x, sigma=sigma, truncate=radius / sigma, mode='mirror')

    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a, mu_b = window(a), window(b)
    var_a = window(a * a) - mu_a ** 2
    var_b = window(b * b) - mu_b ** 2
    cov = window(a * b) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))


def ssim(a: ArrayLike, b: ArrayLike, mask: Optional[ArrayLike] = None, **window) -> float:
    """
    Mean SSIM, over the whole volume or over the mask voxels of the full-volume map.

    @raises EmptyMaskError: mask selects no voxel
    """
    _, _, m = _pair(a, b, mask)
    values = ssim_map(a, b, **window)
    return float(values.mean() if m is None else values[m].mean())


def mse(a: ArrayLike, b: ArrayLike, mask: Optional[ArrayLike] = None) -> float:
    x, y = _restrict(*_pair(a, b, mask))
    return float(np.mean((x - y) ** 2))


def psnr(a: ArrayLike, b: ArrayLike, mask: Optional[ArrayLike] = None, data_range: Optional[float] = None) -> float:
    """
    10 * log10(L^2 / MSE) in dB; math.inf for identical inputs.

    @raises EmptyMaskError: mask selects no voxel
    """
    data_range = MetricsConfig.get_data_range() if data_range is None else data_range
    error = mse(a, b, mask)
    if error == 0:
        return math.inf
    return float(10 * np.log10(data_range ** 2 / error))


def mae(a: ArrayLike, b: ArrayLike, mask: Optional[ArrayLike] = None) -> float:
    x, y = _restrict(*_pair(a, b, mask))
    return float(np.mean(np.abs(x - y)))


def nmse(a: ArrayLike, b: ArrayLike, mask: Optional[ArrayLike] = None) -> float:
    """
    sum((a - b)^2) / sum(b^2); b is the reference.

    @raises ZeroEnergyReferenceError: b is zero on the evaluation region
    """
    x, y = _restrict(*_pair(a, b, mask))
    energy = float(np.sum(y ** 2))
    if energy == 0:
        raise ZeroEnergyReferenceError()
    return float(np.sum((x - y) ** 2) / energy)


def weighted_score(ssim_v: float, psnr_v: float, mae_v: float, nmse_v: float) -> float:
    """
    0.7 * SSIM + 0.1 * PSNR + 0.1 * (1 - MAE) + 0.1 * (1 - NMSE).

    @raises NonFiniteScoreError: any component is inf or nan
    """
    components = {'ssim': ssim_v, 'psnr_db': psnr_v, 'mae': mae_v, 'nmse': nmse_v}
    if not all(math.isfinite(v) for v in components.values()):
        raise NonFiniteScoreError(components)
    w_s, w_p, w_m, w_n = SCORE_WEIGHTS
    return w_s * ssim_v + w_p * psnr_v + w_m * (1 - mae_v) + w_n * (1 - nmse_v)


# Reports ---------------------------------------------------------------------

def _parse_inf(value: Any) -> Any:
    if isinstance(value, str) and value.strip().lower() in ("inf", "+inf", "infinity"):
        return math.inf
    return value


InfFloat = Annotated[
    float,
    BeforeValidator(_parse_inf),
    PlainSerializer(lambda v: "inf" if math.isinf(v) else v, return_type=Any, when_used='json'),
]


def _safe_score(values: Mapping[str, float]) -> Optional[float]:
    if not all(math.isfinite(v) for v in values.values()):
        return None
    return weighted_score(values['ssim'], values['psnr_db'], values['mae'], values['nmse'])


class ContrastMetrics(BaseModel):
    """The four metrics of one (subject, contrast) pair, masked and unmasked."""
    model_config = ConfigDict(frozen=True)

    subject_id: str
    contrast: str
    ssim_masked: float
    ssim_unmasked: float
    psnr_db_masked: InfFloat
    psnr_db_unmasked: InfFloat
    mae_masked: float
    mae_unmasked: float
    nmse_masked: float
    nmse_unmasked: float

    def values(self, region: str) -> Dict[str, float]:
        return {name: getattr(self, f"{name}_{region}") for name in METRIC_NAMES}

    def weighted(self, region: str) -> Optional[float]:
        return _safe_score(self.values(region))


class MetricReport(BaseModel):
    """
    Metrics of one model (or the raw ULF baseline) over a set of subjects.

    Mean fields average over every (subject, contrast) entry. Weighted scores follow
    the aggregation order; they are None, with inf_contaminated set, when an infinite
    PSNR enters them.
    """
    source: str
    aggregation: Aggregation = "means"
    entries: List[ContrastMetrics]
    ssim_masked: float
    ssim_unmasked: float
    psnr_db_masked: InfFloat
    psnr_db_unmasked: InfFloat
    mae_masked: float
    mae_unmasked: float
    nmse_masked: float
    nmse_unmasked: float
    weighted_masked: Optional[float] = None
    weighted_unmasked: Optional[float] = None
    inf_contaminated: bool = False

    @classmethod
    def from_entries(cls, source: str, entries: Sequence[ContrastMetrics],
                     aggregation: Optional[str] = None) -> 'MetricReport':
        aggregation = aggregation or MetricsConfig.get_aggregation()
        if not entries:
            raise ValueError("A metric report needs at least one entry")
        means = {
            f"{name}_{region}": float(np.mean([getattr(e, f"{name}_{region}") for e in entries]))
            for name in METRIC_NAMES for region in ("masked", "unmasked")
        }

        weighted, contaminated = {}, False
        for region in ("masked", "unmasked"):
            if aggregation == "means":
                score = _safe_score({n: means[f"{n}_{region}"] for n in METRIC_NAMES})
            else:
                scores = [e.weighted(region) for e in entries]
                score = None if any(s is None for s in scores) else float(np.mean(scores))
            contaminated |= score is None
            weighted[f"weighted_{region}"] = score

        return cls(source=source, aggregation=aggregation, entries=list(entries), **means, **weighted,
                   inf_contaminated=contaminated)

    @property
    def subject_ids(self) -> List[str]:
        return sorted({e.subject_id for e in self.entries})

    def summary(self) -> Dict[str, Optional[float]]:
        """Aggregate row with the fixed CSV field names."""
        fields = [f"{n}_{r}" for n in METRIC_NAMES for r in ("masked", "unmasked")]
        return {**{f: getattr(self, f) for f in fields},
                'weighted_masked': self.weighted_masked, 'weighted_unmasked': self.weighted_unmasked}

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for entry in self.entries:
            row = entry.model_dump()
            row['weighted_masked'] = entry.weighted('masked')
            row['weighted_unmasked'] = entry.weighted('unmasked')
            rows.append(row)
        rows.append({'subject_id': 'mean', 'contrast': 'all', **self.summary()})
        frame = pd.DataFrame(rows)
        frame.insert(0, 'source', self.source)
        return frame

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    @classmethod
    def from_json(cls, payload: str) -> 'MetricReport':
        return cls.model_validate_json(payload)

    def save(self, directory: Union[str, Path], stem: Optional[str] = None) -> Tuple[Path, Path]:
        """Write <stem>.json and <stem>.csv into directory; returns both paths."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = stem or f"metrics_{self.source}"
        json_path, csv_path = directory / f"{stem}.json", directory / f"{stem}.csv"
        json_path.write_text(self.to_json())
        self.to_frame().to_csv(csv_path, index=False)
        return json_path, csv_path


def _contrast_map(x: Union[Subject, Mapping[str, Volume], Any], domain: str) -> Mapping[str, Volume]:
    if isinstance(x, Subject):
        volumes = x.hf if domain == "hf" else x.ulf
        if volumes is None:
            raise ContrastMismatchError([], CONTRASTS)
        return volumes
    if hasattr(x, 'volumes'):
        return x.volumes
    return x


def contrast_metrics(pred: ArrayLike, ref: ArrayLike, mask: ArrayLike, subject_id: str,
                     contrast: str) -> ContrastMetrics:
    """
    All four metrics of one contrast, masked and unmasked.

    @raises MissingMaskError: mask is None
    """
    if mask is None:
        raise MissingMaskError(subject_id)
    values = {}
    for region, region_mask in (("masked", mask), ("unmasked", None)):
        values[f"ssim_{region}"] = ssim(pred, ref, region_mask)
        values[f"psnr_db_{region}"] = psnr(pred, ref, region_mask)
        values[f"mae_{region}"] = mae(pred, ref, region_mask)
        values[f"nmse_{region}"] = nmse(pred, ref, region_mask)
    return ContrastMetrics(subject_id=subject_id, contrast=contrast, **values)


def evaluate_subject(pred: Any, ref: Any, mask: ArrayLike, subject_id: str = "subject", source: str = "model",
                     aggregation: Optional[str] = None) -> MetricReport:
    """
    Metric report of one subject over all its contrasts.

    @param pred: Enhancement, Subject (its ULF volumes are scored) or contrast -> Volume mapping
    @param ref: Subject (its HF volumes are the reference) or contrast -> Volume mapping
    @param mask: Head mask restricting the masked metrics; required
    @param subject_id: Id recorded in the report entries
    @param source: Model name recorded in the report
    @param aggregation: 'means' or 'per_image' (default [METRICS] aggregation)
    @raises ContrastMismatchError: pred and ref cover different contrasts
    @raises MissingMaskError: mask is None
    """
    if mask is None:
        raise MissingMaskError(subject_id)
    predicted, reference = _contrast_map(pred, "ulf"), _contrast_map(ref, "hf")
    if set(predicted) != set(reference):
        raise ContrastMismatchError(list(predicted), list(reference))
    ordered = [c for c in CONTRASTS if c in reference] + sorted(set(reference) - set(CONTRASTS))
    entries = [contrast_metrics(predicted[c], reference[c], mask, subject_id, c) for c in ordered]
    return MetricReport.from_entries(source, entries, aggregation)


def merge_reports(reports: Sequence[MetricReport], source: Optional[str] = None,
                  aggregation: Optional[str] = None) -> MetricReport:
    """Pool the entries of several per-subject reports into one report."""
    if not reports:
        raise ValueError("Nothing to merge")
    entries = [entry for report in reports for entry in report.entries]
    return MetricReport.from_entries(source or reports[0].source, entries, aggregation or reports[0].aggregation)


def save_metric_table(reports: Sequence[MetricReport], directory: Union[str, Path],
                      stem: str = "metric_table") -> Tuple[Path, Path]:
    """
    One row per report (model column of the results table) as CSV and JSON.

    @return: (csv path, json path)
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = [{'source': r.source, **r.summary(), 'inf_contaminated': r.inf_contaminated} for r in reports]
    csv_path, json_path = directory / f"{stem}.csv", directory / f"{stem}.json"
    pd.DataFrame(rows).to_csv(csv_path, index=False)
    json_path.write_text(json.dumps(
        [{k: ("inf" if isinstance(v, float) and math.isinf(v) else v) for k, v in row.items()} for row in rows],
        indent=2))
    return csv_path, json_path
