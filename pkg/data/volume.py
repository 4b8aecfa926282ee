"""Volumetric data types shared by every stage of the pipeline."""
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Dict, List, Optional, Tuple

import numpy as np

from core.exceptions import LabelRangeError, ShapeMismatchError, SplitError

CONTRASTS: Tuple[str, ...] = ("T1", "T2", "FLAIR")
UNIT_TOLERANCE = 1e-6


class NormState(Enum):
    """Intensity normalization state of a volume."""
    RAW = "raw"
    UNIT_NORMALIZED = "unit_normalized"


class TissueClass(IntEnum):
    """Six-class labelmap, in the channel order of the segmentation logits."""
    BACKGROUND = 0
    CSF = 1
    GM = 2
    WM = 3
    SKULL = 4
    SCALP = 5


N_CLASSES = len(TissueClass)
BRAIN_CLASSES = (TissueClass.CSF, TissueClass.GM, TissueClass.WM)


@dataclass
class Volume:
    """
    A 3D scalar grid in (depth, height, width) order.

    Depth is the axial slice axis, the one slabs are cut along.
    """
    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    norm_state: NormState = NormState.RAW
    affine: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ShapeMismatchError((0, 0, 0), self.data.shape, "volume dimensions")
        if any(n < 1 for n in self.data.shape):
            raise ValueError(f"Volume shape components must be >= 1, got {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"Voxel spacing must be three positive values, got {self.spacing}")
        if self.norm_state is NormState.UNIT_NORMALIZED and self.data.size:
            lo, hi = float(np.min(self.data)), float(np.max(self.data))
            if lo < -UNIT_TOLERANCE or hi > 1 + UNIT_TOLERANCE:
                raise ValueError(f"Unit-normalized volume has intensities in [{lo}, {hi}]")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.data.shape)

    @property
    def depth(self) -> int:
        return self.data.shape[0]

    def with_data(self, data: np.ndarray, norm_state: Optional[NormState] = None) -> 'Volume':
        """Copy of this volume's geometry carrying new voxel data."""
        return replace(self, data=np.asarray(data), norm_state=norm_state or self.norm_state)

    def mark_normalized(self) -> 'Volume':
        """
        Declare data that already lies in [0, 1] as unit-normalized.

        @raises ValueError: if intensities fall outside [0, 1]
        """
        lo, hi = float(self.data.min()), float(self.data.max())
        if lo < -UNIT_TOLERANCE or hi > 1 + UNIT_TOLERANCE:
            raise ValueError(f"Cannot mark volume with intensities in [{lo}, {hi}] as unit-normalized")
        return self.with_data(np.clip(self.data, 0.0, 1.0), NormState.UNIT_NORMALIZED)

    def crop_depth(self, start: int, depth: int) -> 'Volume':
        """Axial sub-block [start, start + depth)."""
        return self.with_data(self.data[start:start + depth])


@dataclass
class Subject:
    """
    Paired multi-contrast sample.

    ulf/hf map contrast name to Volume. labelmap holds integer labels 0..5;
    bg_mask is 1 on the head (the region kept by masked metrics).
    void_mask is only present for phantoms with an inserted signal void.
    """
    subject_id: str
    ulf: Dict[str, Volume]
    hf: Optional[Dict[str, Volume]] = None
    labelmap: Optional[Volume] = None
    bg_mask: Optional[Volume] = None
    void_mask: Optional[Volume] = None

    def __post_init__(self):
        if set(self.ulf) != set(CONTRASTS):
            raise ValueError(f"Subject {self.subject_id}: ULF contrasts {sorted(self.ulf)} != {list(CONTRASTS)}")
        if self.hf is not None and set(self.hf) != set(CONTRASTS):
            raise ValueError(f"Subject {self.subject_id}: HF contrasts {sorted(self.hf)} != {list(CONTRASTS)}")

        for name, volume in self._named_volumes():
            if volume.shape != self.shape:
                raise ShapeMismatchError(self.shape, volume.shape, f"{self.subject_id} {name} shape")

        if self.labelmap is not None:
            found = set(np.unique(self.labelmap.data).astype(int).tolist())
            allowed = {int(c) for c in TissueClass}
            if not found <= allowed:
                raise LabelRangeError(found - allowed, allowed)
        for name, mask in (("bg_mask", self.bg_mask), ("void_mask", self.void_mask)):
            if mask is not None and not set(np.unique(mask.data).tolist()) <= {0, 1}:
                raise ValueError(f"Subject {self.subject_id}: {name} is not binary")

    def _named_volumes(self) -> List[Tuple[str, Volume]]:
        named = [(f"ulf/{c}", v) for c, v in self.ulf.items()]
        if self.hf is not None:
            named += [(f"hf/{c}", v) for c, v in self.hf.items()]
        for name in ("labelmap", "bg_mask", "void_mask"):
            if getattr(self, name) is not None:
                named.append((name, getattr(self, name)))
        return named

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.ulf[CONTRASTS[0]].shape

    @property
    def has_hf(self) -> bool:
        return self.hf is not None

    def stack(self, domain: str = "ulf") -> np.ndarray:
        """
        Contrast channels as one float32 array of shape (3, D, H, W), in CONTRASTS order.

        @param domain: 'ulf' or 'hf'
        """
        volumes = self.ulf if domain == "ulf" else self.hf
        if volumes is None:
            raise ValueError(f"Subject {self.subject_id} has no {domain} volumes")
        return np.stack([volumes[c].data for c in CONTRASTS]).astype(np.float32)

    def crop_depth(self, start: int, depth: int) -> 'Subject':
        """Same axial crop applied to every contrast, the labelmap and the masks."""

        def crop(volume: Optional[Volume]) -> Optional[Volume]:
            return None if volume is None else volume.crop_depth(start, depth)

        return Subject(
            subject_id=self.subject_id,
            ulf={c: crop(v) for c, v in self.ulf.items()},
            hf=None if self.hf is None else {c: crop(v) for c, v in self.hf.items()},
            labelmap=crop(self.labelmap),
            bg_mask=crop(self.bg_mask),
            void_mask=crop(self.void_mask),
        )


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/validation subject id lists."""
    train: Tuple[str, ...]
    val: Tuple[str, ...]
    seed: int

    def __post_init__(self):
        overlap = set(self.train) & set(self.val)
        if overlap:
            raise SplitError(f"Subjects in both train and val: {sorted(overlap)}")
        if len(set(self.train)) != len(self.train) or len(set(self.val)) != len(self.val):
            raise SplitError("Split lists contain duplicate subject ids")

    def to_dict(self) -> dict:
        return {'train': list(self.train), 'val': list(self.val), 'seed': self.seed}

    @classmethod
    def from_dict(cls, payload: dict) -> 'DatasetSplit':
        return cls(train=tuple(payload['train']), val=tuple(payload['val']), seed=int(payload['seed']))


@dataclass
class Enhancement:
    """Enhanced contrasts produced by one model (or the ensemble) for one subject."""
    subject_id: str
    source: str
    volumes: Dict[str, Volume]

    def stack(self) -> np.ndarray:
        return np.stack([self.volumes[c].data for c in CONTRASTS]).astype(np.float32)
