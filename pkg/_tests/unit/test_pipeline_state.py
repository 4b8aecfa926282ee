from core.pipeline import PHASE_ORDER, PipelineState


def test_mark_drops_later_phases(tmp_path):
    state = PipelineState()
    for name in PHASE_ORDER[:6]:
        state.mark(name)

    state.mark("segmentation")

    assert state.completed == ["data", "split", "segmentation"]
    assert state.is_done("split") and not state.is_done("trex")


def test_state_round_trip(tmp_path):
    path = tmp_path / "state" / "pipeline_state.json"
    assert PipelineState.load(path) == PipelineState()

    state = PipelineState(completed=["data", "split"], seg_hash="abc")
    state.save(path)

    assert PipelineState.load(path) == state
