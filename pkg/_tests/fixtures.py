from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np
import pytest
import torch
import yaml

from data.phantom import PhantomParams, generate_phantom
from data.volume import CONTRASTS, NormState, Subject, Volume
from helpers.torch_helper import freeze, seed_everything
from models.discriminator_model import DiscriminatorConfig
from models.generator_model import GeneratorConfig
from models.segmentation_model import SegModelConfig, SegmentationNet, build_segmentation_model
from models.trex_model import TrexConfig

SMALL_SIZE = 16

TINY_SEG = SegModelConfig(feature_size=12, depths=(1, 1, 1, 1))
TINY_GENERATOR = GeneratorConfig(n_res_blocks=1, base_channels=4, spade_hidden=4)
TINY_TREX = TrexConfig(enc_channels=(4, 8), n_transformer_layers=1, n_heads=2, token_dim=8, pos_grid=(2, 2, 2))
TINY_DISCRIMINATOR = DiscriminatorConfig(base_channels=4, n_layers=2)


def unit_volume(data: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> Volume:
    return Volume(np.asarray(data, dtype=np.float32), spacing=spacing, norm_state=NormState.UNIT_NORMALIZED)


def constant_subject(subject_id: str = "const", shape=(8, 8, 8), value: float = 0.5,
                     with_hf: bool = True) -> Subject:
    """Subject whose every contrast is constant; labelmap is all WM inside a centred cube."""
    labels = np.zeros(shape, dtype=np.int16)
    labels[2:-2, 2:-2, 2:-2] = 3
    volumes = {c: unit_volume(np.full(shape, value)) for c in CONTRASTS}
    return Subject(
        subject_id=subject_id,
        ulf=volumes,
        hf={c: unit_volume(np.full(shape, value)) for c in CONTRASTS} if with_hf else None,
        labelmap=Volume(labels),
        bg_mask=unit_volume((labels > 0).astype(np.uint8)),
    )


@pytest.fixture
def small_params() -> PhantomParams:
    """16^3 phantoms, small enough for network smoke tests."""
    return PhantomParams(size=SMALL_SIZE, n_ellipsoids=2)


@pytest.fixture
def void_params() -> PhantomParams:
    """32^3 phantoms that always carry an inserted signal void."""
    return PhantomParams(size=32, void_probability=1.0)


@pytest.fixture
def phantom_subject(small_params) -> Subject:
    return generate_phantom(small_params, seed=3, subject_id="phantom_small")


@pytest.fixture
def phantom_subjects(small_params) -> List[Subject]:
    return [generate_phantom(small_params, seed=seed, subject_id=f"phantom_{seed:03d}") for seed in range(4)]


@pytest.fixture
def frozen_seg() -> Tuple[SegmentationNet, str]:
    """Untrained tiny segmentation prior, frozen; (model, weights hash)."""
    seed_everything(0)
    model = build_segmentation_model(TINY_SEG)
    return model, freeze(model)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def double_precision():
    """Run a test with float64 as torch default dtype."""
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)


def tiny_pipeline_tree(out_dir: Path, **overrides: Any) -> Dict[str, Any]:
    """Pipeline configuration tree with the smallest networks and one-epoch schedules."""
    tree: Dict[str, Any] = {
        'seed': 5,
        'out_dir': str(out_dir),
        'device': 'cpu',
        'data': {'n_phantoms': 4, 'phantom': {'size': SMALL_SIZE, 'n_ellipsoids': 2}},
        'split': {'n_val': 1},
        'segmentation': {
            'model': TINY_SEG.model_dump(mode='json'),
            'schedule': {'epochs_augmented': 1, 'epochs_plain': 1},
        },
        'cyclegan': {
            'forward': TINY_GENERATOR.model_dump(mode='json'),
            'backward': {'n_res_blocks': 1, 'base_channels': 4},
            'schedule': {'epochs': 1},
            'discriminator': TINY_DISCRIMINATOR.model_dump(mode='json'),
        },
        'trex': {
            'model': TINY_TREX.model_dump(mode='json'),
            'schedule': {'epochs_adversarial': 1, 'epochs_finetune': 1},
            'discriminator': TINY_DISCRIMINATOR.model_dump(mode='json'),
        },
        'slab': {'slab_depth': 8, 'stride': 4},
        'figures': {'max_subjects': 1},
    }
    tree.update(overrides)
    return tree


@pytest.fixture
def tiny_config_path(tmp_path) -> Path:
    """YAML file holding tiny_pipeline_tree, out_dir under tmp_path/run."""
    path = tmp_path / "pipeline.yaml"
    path.write_text(yaml.safe_dump(tiny_pipeline_tree(tmp_path / "run")))
    return path
