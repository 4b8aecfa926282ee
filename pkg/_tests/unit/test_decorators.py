"""
Tests for the phase decorator.
"""
import pytest

from core.exceptions import PhaseError
from core.logger import Log
from helpers.decorators import phase


def test_phase_without_arguments_returns_result():
    @phase
    def make_split():
        return 42

    assert make_split() == 42
    assert make_split.phase_name == "make_split"
    assert make_split.__name__ == "make_split"


def test_phase_logs_numbered_step(tmp_path):
    Log.switch_log_file(tmp_path / "phase.log")

    @phase(name="segmentation", content="training on {n} subjects")
    def train(n):
        return n

    train(8)
    for handler in Log.get_logger().handlers:
        handler.flush()

    assert "segmentation: training on 8 subjects" in (tmp_path / "phase.log").read_text()
    assert Log.get_step_counter() == 1


def test_phase_wraps_failures_with_phase_tag():
    @phase(name="trex")
    def train():
        raise ValueError("loss is nan")

    with pytest.raises(PhaseError) as exc_info:
        train()

    error = exc_info.value
    assert error.phase == "trex"
    assert isinstance(error.cause, ValueError)
    assert isinstance(error.__cause__, ValueError)
    assert str(error).startswith("[trex] ValueError: loss is nan")


def test_nested_phase_errors_keep_the_inner_tag():
    @phase(name="inner")
    def inner():
        raise RuntimeError("boom")

    @phase(name="outer")
    def outer():
        inner()

    with pytest.raises(PhaseError) as exc_info:
        outer()

    assert exc_info.value.phase == "inner"


def test_unknown_placeholder_falls_back_to_template():
    @phase(content="ensemble on {missing}")
    def fit(split):
        return split

    assert fit("val") == "val"
