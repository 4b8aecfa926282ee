"""Hallucination analysis configuration parser module."""
from core.configuration.config_parser import ConfigParser


class HallucinationConfig(ConfigParser):
    """Parser for signal-void detection and hallucination flagging defaults."""

    SECTION_NAME = "HALLUCINATION"

    @classmethod
    def get_void_threshold(cls) -> float:
        """
        Get the smoothed ULF intensity below which head voxels count as void.

        @return: Intensity threshold
        """
        return float(cls.get_number('void_threshold', 0.1, bounds=(0.0, 1.0)))

    @classmethod
    def get_flag_threshold(cls) -> float:
        """
        Get the void/brain intensity ratio above which a contrast is flagged.

        @return: Ratio threshold
        """
        return float(cls.get_number('flag_threshold', 0.3, bounds=(0.0, None)))

    @classmethod
    def get_smoothing_sigma(cls) -> float:
        """@return: Gaussian smoothing applied to the ULF before thresholding"""
        return float(cls.get_number('smoothing_sigma', 1.0, bounds=(0.0, None)))

    @classmethod
    def get_opening_iterations(cls) -> int:
        """@return: Number of binary-opening iterations used to remove speckle"""
        return int(cls.get_number('opening_iterations', 1, bounds=(0, None)))
