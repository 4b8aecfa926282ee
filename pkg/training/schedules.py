"""Training schedules and the arctangent paired-loss weight."""
import math
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from core.exceptions import EmptyScheduleError
from training.losses import CycleLossWeights


class _Schedule(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    learning_rate: float = Field(2e-4, gt=0.0)
    betas: Tuple[float, float] = (0.5, 0.999)
    seed: int = 0
    checkpoint_every: int = Field(1, ge=1)

    @property
    def total_epochs(self) -> int:
        raise NotImplementedError

    def check(self) -> None:
        """@raises EmptyScheduleError: the schedule has no epochs"""
        if self.total_epochs <= 0:
            raise EmptyScheduleError()


class SegSchedule(_Schedule):
    """Augmented epochs first, then plain epochs."""
    learning_rate: float = Field(1e-3, gt=0.0)
    betas: Tuple[float, float] = (0.9, 0.999)
    epochs_augmented: int = Field(20, ge=0)
    epochs_plain: int = Field(5, ge=0)

    @property
    def total_epochs(self) -> int:
        return self.epochs_augmented + self.epochs_plain

    def augmented(self, epoch: int) -> bool:
        return epoch < self.epochs_augmented


class CycleGanSchedule(_Schedule):
    epochs: int = Field(30, ge=0)
    slab_depth: Optional[int] = Field(None, ge=1)

    @property
    def total_epochs(self) -> int:
        return self.epochs


class TrexSchedule(_Schedule):
    """Adversarial phase A then supervised phase B (content loss only, discriminator frozen)."""
    epochs_adversarial: int = Field(20, ge=0)
    epochs_finetune: int = Field(2, ge=0)
    slab_training: bool = True
    slab_depth: Optional[int] = Field(None, ge=1)

    @property
    def total_epochs(self) -> int:
        return self.epochs_adversarial + self.epochs_finetune

    def phase(self, epoch: int) -> str:
        return "A" if epoch < self.epochs_adversarial else "B"


def penalty_schedule(epoch: int, weights: CycleLossWeights) -> float:
    """
    lambda(epoch) = lambda_paired_max * (2 / pi) * arctan(epoch / tau).

    Zero at epoch 0, half the ceiling at epoch tau, approaching the ceiling afterwards.
    """
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return weights.lambda_paired_max * (2 / math.pi) * math.atan(epoch / weights.tau)
