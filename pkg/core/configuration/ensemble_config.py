"""Ensemble configuration parser module."""
from core.configuration.config_parser import ConfigParser

OBJECTIVES = ("weighted_masked", "weighted_unmasked")


class EnsembleConfig(ConfigParser):
    """Parser for ensemble weight fitting defaults."""

    SECTION_NAME = "ENSEMBLE"

    @classmethod
    def get_grid_step(cls) -> float:
        """@return: Grid resolution in (0, 0.5]"""
        value = float(cls.get_number('grid_step', 0.05, bounds=(0.0, 0.5)))
        return value if value > 0 else 0.05

    @classmethod
    def get_objective(cls) -> str:
        """@return: Name of the score maximized by the grid search"""
        return cls.get_choice('objective', 'weighted_masked', OBJECTIVES)

    @classmethod
    def is_per_contrast(cls) -> bool:
        """@return: True if one weight is fitted per contrast"""
        return cls.get_value('per_contrast', False)
