"""Training schedules and the paired-loss weight."""
import math

import pytest

from core.exceptions import EmptyScheduleError
from training.losses import CycleLossWeights
from training.schedules import CycleGanSchedule, SegSchedule, TrexSchedule, penalty_schedule


def test_penalty_schedule_shape():
    weights = CycleLossWeights(lambda_paired_max=2.0, tau=10.0)

    values = [penalty_schedule(epoch, weights) for epoch in range(100)]

    assert values[0] == 0.0
    assert penalty_schedule(10, weights) == pytest.approx(1.0)
    assert all(a < b for a, b in zip(values, values[1:]))
    assert max(values) < 2.0
    assert penalty_schedule(10 ** 6, weights) == pytest.approx(2.0, abs=1e-4)
    with pytest.raises(ValueError):
        penalty_schedule(-1, weights)


def test_penalty_schedule_follows_arctangent():
    weights = CycleLossWeights(lambda_paired_max=1.0, tau=20.0)
    assert penalty_schedule(7, weights) == pytest.approx(2 / math.pi * math.atan(7 / 20))


def test_schedule_epochs():
    seg = SegSchedule(epochs_augmented=2, epochs_plain=1)
    assert seg.total_epochs == 3
    assert [seg.augmented(e) for e in range(3)] == [True, True, False]

    trex = TrexSchedule(epochs_adversarial=2, epochs_finetune=2)
    assert [trex.phase(e) for e in range(4)] == ["A", "A", "B", "B"]


@pytest.mark.parametrize("schedule", [
    SegSchedule(epochs_augmented=0, epochs_plain=0),
    CycleGanSchedule(epochs=0),
    TrexSchedule(epochs_adversarial=0, epochs_finetune=0),
])
def test_empty_schedules_are_rejected(schedule):
    with pytest.raises(EmptyScheduleError):
        schedule.check()
