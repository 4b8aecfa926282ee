import json

from core.pipeline_run import RUN_FILE, PipelineRun, PipelineRunStatus


def test_run_lifecycle_completed(tmp_path):
    run = PipelineRun(tmp_path, "evaluate", seed=7, config="pipeline.yaml")

    assert run.run_id.startswith("evaluate_")
    assert run.status is PipelineRunStatus.STARTED

    run.complete()

    payload = json.loads((tmp_path / RUN_FILE).read_text())
    assert payload['status'] == "completed"
    assert payload['seed'] == 7 and payload['config'] == "pipeline.yaml"
    assert payload['duration'] >= 0


def test_run_lifecycle_failed(tmp_path):
    run = PipelineRun(tmp_path, "trex-train", run_id="fixed")

    run.fail(ValueError("loss is nan"), phase="trex")

    payload = json.loads((tmp_path / RUN_FILE).read_text())
    assert payload['run_id'] == "fixed"
    assert payload['status'] == "failed"
    assert payload['phase'] == "trex"
    assert payload['error'] == "ValueError: loss is nan"


def test_build_id_from_environment(tmp_path, monkeypatch):
    for var in ('BUILD_NUMBER', 'CI_BUILD_ID', 'BUILD_ID'):
        monkeypatch.delenv(var, raising=False)
    monkeypatch.setenv('CI_BUILD_ID', '1234')

    assert PipelineRun(tmp_path, "split").get_metadata()['build_id'] == '1234'
