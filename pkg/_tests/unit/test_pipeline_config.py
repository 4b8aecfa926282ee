"""Pipeline configuration loading, overrides and validation."""
import pytest
import yaml

from core.common_paths import CONFIG_DIR, DEFAULT_PIPELINE_CONFIG_PATH
from core.configuration.pipeline_config import (
    PipelineConfig, apply_overrides, build_pipeline_config, load_pipeline_config, parse_override
)
from core.exceptions import ConfigValidationError
from models.generator_model import ConditioningMode, Direction
from _tests.fixtures import tiny_pipeline_tree


def test_defaults_follow_ini():
    config = build_pipeline_config()

    assert config.slab.slab_depth == 40 and config.slab.stride == 5
    assert config.metrics.aggregation == "means"
    assert config.ensemble.grid_step == 0.05 and config.ensemble.objective == "weighted_masked"
    assert config.hallucination.flag_threshold == 0.3
    assert config.cyclegan.backward.direction is Direction.HF_TO_ULF


def test_shipped_configurations_validate():
    toy = load_pipeline_config(DEFAULT_PIPELINE_CONFIG_PATH)
    assert toy.data.n_phantoms == 10 and toy.split.n_val == 2

    paper = load_pipeline_config(CONFIG_DIR / "pipeline_paper.yaml")
    assert paper.segmentation.model.paper_scale and paper.trex.model.paper_scale
    assert not paper.data.generate_phantoms


def test_seeds_derive_from_global_seed():
    config = build_pipeline_config({'seed': 3, 'trex': {'schedule': {'seed': 99}}})

    assert config.split.seed == 3
    assert config.segmentation.schedule.seed == 31
    assert config.cyclegan.schedule.seed == 32
    assert config.trex.schedule.seed == 99
    assert config.phantom_seed(4) == 3004


def test_overrides_are_parsed_as_yaml():
    assert parse_override("slab.stride=8") == (["slab", "stride"], 8)
    assert parse_override("ensemble.per_contrast=true") == (["ensemble", "per_contrast"], True)

    tree = apply_overrides({'slab': {'slab_depth': 16}}, ["slab.stride=4", "cyclegan.forward.conditioning_mode=spade"])

    assert tree == {'slab': {'slab_depth': 16, 'stride': 4}, 'cyclegan': {'forward': {'conditioning_mode': 'spade'}}}
    config = build_pipeline_config(tree)
    assert config.cyclegan.forward.conditioning_mode is ConditioningMode.SPADE


@pytest.mark.parametrize("override", ["no_equals_sign", "=3", "slab..stride=2"])
def test_malformed_overrides(override):
    with pytest.raises(ConfigValidationError):
        parse_override(override)


@pytest.mark.parametrize("tree", [
    {'slab': {'slab_depth': 4, 'stride': 8}},
    {'split': {'n_val': 10}, 'data': {'n_phantoms': 10}},
    {'data': {'generate_phantoms': False}},
    {'segmentation': {'model': {'feature_size': 20}}},
    {'cyclegan': {'backward': {'conditioning_mode': 'concat'}}},
    {'unknown_section': {}},
    {'ensemble': {'grid_step': 0.75}},
])
def test_invalid_trees_are_rejected(tree):
    with pytest.raises(ConfigValidationError) as exc_info:
        build_pipeline_config(tree)
    assert exc_info.value.details['errors']


def test_load_errors(tmp_path):
    with pytest.raises(ConfigValidationError):
        load_pipeline_config(tmp_path / "absent.yaml")

    broken = tmp_path / "broken.yaml"
    broken.write_text("seed: [unclosed")
    with pytest.raises(ConfigValidationError):
        load_pipeline_config(broken)

    scalar = tmp_path / "scalar.yaml"
    scalar.write_text("42")
    with pytest.raises(ConfigValidationError):
        load_pipeline_config(scalar)


def test_check_paths_requires_existing_root(tmp_path):
    config = build_pipeline_config({'data': {'root': str(tmp_path / "missing"), 'generate_phantoms': False}})
    with pytest.raises(ConfigValidationError):
        config.check_paths()

    (tmp_path / "missing").mkdir()
    config.check_paths()
    assert config.data.normalization == (0.5, 99.5)


def test_resolved_config_round_trip(tmp_path):
    config = build_pipeline_config(tiny_pipeline_tree(tmp_path / "run"))

    path = config.save()

    assert path == tmp_path / "run" / "config.yaml"
    reloaded = PipelineConfig.model_validate(yaml.safe_load(path.read_text()))
    assert reloaded == config
    assert config.dataset_root == tmp_path / "run" / "data"
