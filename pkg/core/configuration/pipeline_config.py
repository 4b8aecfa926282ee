"""
Pipeline configuration schema.

The pipeline is described by one YAML document validated by the models below
before any work starts. Example (toy scale):

```yaml
seed: 7
out_dir: runs/toy
data:
  n_phantoms: 10
  phantom:
    size: 32
split:
  n_val: 2
segmentation:
  schedule:
    epochs_augmented: 20
    epochs_plain: 5
cyclegan:
  forward:
    conditioning_mode: concat
  schedule:
    epochs: 30
slab:
  slab_depth: 16
  stride: 4
```

Fields that also exist in config.ini ([SLAB], [METRICS], [ENSEMBLE], [HALLUCINATION],
[RUNTIME]) take their INI value as default.
"""
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from core.configuration.ensemble_config import EnsembleConfig
from core.configuration.hallucination_config import HallucinationConfig
from core.configuration.metrics_config import MetricsConfig
from core.configuration.runtime_config import RuntimeConfig
from core.configuration.slab_config import SlabConfig
from core.configuration.volume_io_config import VolumeIoConfig
from core.exceptions import ConfigValidationError
from core.logger import Log
from data.augmentation import AugmentationPolicy
from data.phantom import PhantomParams
from models.discriminator_model import DiscriminatorConfig
from models.generator_model import Direction, GeneratorConfig
from models.segmentation_model import SegModelConfig
from models.trex_model import TrexConfig
from training.losses import ContentLossWeights, CycleLossWeights
from training.schedules import CycleGanSchedule, SegSchedule, TrexSchedule

RESOLVED_CONFIG_FILE = "config.yaml"


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class DataSection(_Section):
    """Dataset root, or phantom generation into <out_dir>/data when no root is given."""
    root: Optional[Path] = None
    generate_phantoms: bool = True
    n_phantoms: int = Field(10, ge=2)
    phantom: PhantomParams = Field(default_factory=PhantomParams)
    # Percentile window for real data; phantoms are stored unit-normalized
    percentiles: Optional[Tuple[float, float]] = None

    @model_validator(mode='after')
    def _check_source(self) -> 'DataSection':
        if self.root is None and not self.generate_phantoms:
            raise ValueError("data.root is required when generate_phantoms is false")
        if self.percentiles is not None:
            lo, hi = self.percentiles
            if not 0.0 <= lo < hi <= 100.0:
                raise ValueError(f"percentiles must satisfy 0 <= lo < hi <= 100, got {self.percentiles}")
        return self

    @property
    def normalization(self) -> Optional[Tuple[float, float]]:
        """Percentile window passed to load_dataset; None for data already in [0, 1]."""
        if self.generate_phantoms:
            return None
        return self.percentiles or (VolumeIoConfig.get_lo_pct(), VolumeIoConfig.get_hi_pct())


class SplitSection(_Section):
    n_val: int = Field(2, ge=1)
    seed: Optional[int] = None


class SegmentationSection(_Section):
    model: SegModelConfig = Field(default_factory=SegModelConfig)
    schedule: SegSchedule = Field(default_factory=SegSchedule)
    augmentation: AugmentationPolicy = Field(default_factory=AugmentationPolicy)


class CycleGanSection(_Section):
    forward: GeneratorConfig = Field(default_factory=GeneratorConfig)
    backward: GeneratorConfig = Field(default_factory=lambda: GeneratorConfig(direction=Direction.HF_TO_ULF))
    weights: CycleLossWeights = Field(default_factory=CycleLossWeights)
    schedule: CycleGanSchedule = Field(default_factory=CycleGanSchedule)
    discriminator: DiscriminatorConfig = Field(default_factory=DiscriminatorConfig)

    @field_validator('backward', mode='before')
    @classmethod
    def _backward_direction(cls, value: Any) -> Any:
        if isinstance(value, dict) and 'direction' not in value:
            return {**value, 'direction': Direction.HF_TO_ULF.value}
        return value

    @model_validator(mode='after')
    def _check_directions(self) -> 'CycleGanSection':
        if self.forward.direction is not Direction.ULF_TO_HF:
            raise ValueError("cyclegan.forward must be a ulf_to_hf generator")
        if self.backward.direction is not Direction.HF_TO_ULF:
            raise ValueError("cyclegan.backward must be a hf_to_ulf generator")
        return self


class TrexSection(_Section):
    model: TrexConfig = Field(default_factory=TrexConfig)
    content: ContentLossWeights = Field(default_factory=ContentLossWeights)
    schedule: TrexSchedule = Field(default_factory=TrexSchedule)
    discriminator: DiscriminatorConfig = Field(default_factory=DiscriminatorConfig)
    lambda_adv: float = Field(1.0, ge=0.0)


class SlabSection(_Section):
    slab_depth: int = Field(default_factory=SlabConfig.get_slab_depth, ge=1)
    stride: int = Field(default_factory=SlabConfig.get_stride, ge=1)
    per_slab_conditioning: bool = True
    max_workers: int = Field(1, ge=1)
    # T-REX inference on the whole volume; None decides by volume depth
    trex_whole_volume: Optional[bool] = None

    @model_validator(mode='after')
    def _check_stride(self) -> 'SlabSection':
        if self.stride > self.slab_depth:
            raise ValueError(f"slab.stride {self.stride} exceeds slab.slab_depth {self.slab_depth}")
        return self


class MetricsSection(_Section):
    aggregation: Literal["means", "per_image"] = Field(default_factory=MetricsConfig.get_aggregation)


class EnsembleSection(_Section):
    grid_step: float = Field(default_factory=EnsembleConfig.get_grid_step, gt=0.0, le=0.5)
    objective: Literal["weighted_masked", "weighted_unmasked"] = Field(default_factory=EnsembleConfig.get_objective)
    per_contrast: bool = Field(default_factory=EnsembleConfig.is_per_contrast)


class HallucinationSection(_Section):
    void_threshold: float = Field(default_factory=HallucinationConfig.get_void_threshold, ge=0.0, le=1.0)
    flag_threshold: float = Field(default_factory=HallucinationConfig.get_flag_threshold, ge=0.0)
    sources: List[str] = Field(default_factory=lambda: ["cyclegan", "trex", "combined"])


class FiguresSection(_Section):
    max_subjects: Optional[int] = Field(None, ge=1)


class PipelineConfig(_Section):
    """Complete pipeline configuration; every sub-config is validated on construction."""
    seed: int = 0
    out_dir: Path = Path("runs/toy")
    device: str = Field(default_factory=RuntimeConfig.get_device)
    deterministic: bool = Field(default_factory=RuntimeConfig.is_deterministic)
    data: DataSection = Field(default_factory=DataSection)
    split: SplitSection = Field(default_factory=SplitSection)
    segmentation: SegmentationSection = Field(default_factory=SegmentationSection)
    cyclegan: CycleGanSection = Field(default_factory=CycleGanSection)
    trex: TrexSection = Field(default_factory=TrexSection)
    slab: SlabSection = Field(default_factory=SlabSection)
    metrics: MetricsSection = Field(default_factory=MetricsSection)
    ensemble: EnsembleSection = Field(default_factory=EnsembleSection)
    hallucination: HallucinationSection = Field(default_factory=HallucinationSection)
    figures: FiguresSection = Field(default_factory=FiguresSection)

    @model_validator(mode='after')
    def _derive_seeds(self) -> 'PipelineConfig':
        """Schedules without an explicit seed inherit one derived from the global seed."""
        if self.split.seed is None:
            self.split.seed = self.seed
        for offset, section in enumerate((self.segmentation, self.cyclegan, self.trex), start=1):
            if 'seed' not in section.schedule.model_fields_set:
                section.schedule = section.schedule.model_copy(update={'seed': self.seed * 10 + offset})
        if self.split.n_val >= self.data.n_phantoms and self.data.generate_phantoms:
            raise ValueError(f"split.n_val {self.split.n_val} leaves no training phantoms "
                             f"out of {self.data.n_phantoms}")
        return self

    @property
    def dataset_root(self) -> Path:
        return self.data.root if self.data.root is not None else self.out_dir / "data"

    def phantom_seed(self, index: int) -> int:
        return self.seed * 1000 + index

    def check_paths(self) -> None:
        """
        Run-time check of referenced paths.

        @raises ConfigValidationError: dataset root missing while phantom generation is off
        """
        if not self.data.generate_phantoms and not self.dataset_root.is_dir():
            raise ConfigValidationError(f"Dataset root does not exist: {self.dataset_root}",
                                        [f"data.root: {self.dataset_root} not found"])

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode='json'), sort_keys=False)

    def save(self, path: Optional[Union[str, Path]] = None) -> Path:
        """Write the resolved configuration, by default to <out_dir>/config.yaml."""
        path = Path(path) if path is not None else self.out_dir / RESOLVED_CONFIG_FILE
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_yaml())
        return path


def parse_override(override: str) -> Tuple[List[str], Any]:
    """
    Parse a 'section.key=value' override; the value is read as YAML.

    @raises ConfigValidationError: malformed override
    """
    key, sep, raw = override.partition('=')
    keys = [part.strip() for part in key.split('.')]
    if not sep or not all(keys):
        raise ConfigValidationError(f"Malformed override '{override}', expected section.key=value")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigValidationError(f"Cannot parse value of override '{override}': {e}")
    return keys, value


def apply_overrides(raw: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Return a copy of raw with the dotted overrides applied."""
    result = dict(raw)
    for override in overrides:
        keys, value = parse_override(override)
        node = result
        for key in keys[:-1]:
            child = node.get(key)
            child = dict(child) if isinstance(child, dict) else {}
            node[key] = child
            node = child
        node[keys[-1]] = value
        Log.debug(f"Config override {'.'.join(keys)} = {value!r}")
    return result


def _validation_errors(error: ValidationError) -> List[str]:
    return [f"{'.'.join(str(part) for part in e['loc']) or '<root>'}: {e['msg']}" for e in error.errors()]


def build_pipeline_config(raw: Optional[Dict[str, Any]] = None, overrides: Sequence[str] = (),
                          out_dir: Optional[Union[str, Path]] = None, seed: Optional[int] = None) -> PipelineConfig:
    """
    Validate a raw configuration tree.

    @param raw: Parsed YAML document (None for all defaults)
    @param overrides: Dotted section.key=value overrides
    @param out_dir: Shortcut for out_dir=
    @param seed: Shortcut for seed=
    @raises ConfigValidationError: the tree does not validate
    """
    if raw is not None and not isinstance(raw, dict):
        raise ConfigValidationError(f"Pipeline configuration must be a mapping, got {type(raw).__name__}")
    tree = apply_overrides(raw or {}, overrides)
    if out_dir is not None:
        tree['out_dir'] = str(out_dir)
    if seed is not None:
        tree['seed'] = seed
    try:
        return PipelineConfig.model_validate(tree)
    except ValidationError as e:
        errors = _validation_errors(e)
        raise ConfigValidationError(f"Invalid pipeline configuration ({len(errors)} errors)", errors) from e


def load_pipeline_config(path: Union[str, Path], overrides: Sequence[str] = (),
                         out_dir: Optional[Union[str, Path]] = None, seed: Optional[int] = None) -> PipelineConfig:
    """
    Load and validate a YAML pipeline configuration.

    @param path: YAML file
    @param overrides: Dotted section.key=value overrides
    @param out_dir: Overrides out_dir
    @param seed: Overrides seed
    @raises ConfigValidationError: missing file, YAML syntax error or schema violation
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigValidationError(f"Pipeline configuration not found at: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as config_file:
            raw = yaml.safe_load(config_file)
    except yaml.YAMLError as e:
        raise ConfigValidationError(f"Cannot parse {path}: {e}") from e
    config = build_pipeline_config(raw, overrides, out_dir, seed)
    Log.info(f"Loaded pipeline configuration {path} (seed {config.seed}, out_dir {config.out_dir})")
    return config
