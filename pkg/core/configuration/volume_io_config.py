"""Volume I/O configuration parser module."""
from core.configuration.config_parser import ConfigParser


class VolumeIoConfig(ConfigParser):
    """Parser for intensity normalization and background-mask defaults."""

    SECTION_NAME = "VOLUME_IO"

    @classmethod
    def get_lo_pct(cls) -> float:
        """
        Get the lower normalization percentile.

        @return: Percentile in [0, 100)
        """
        return float(cls.get_number('lo_pct', 0.5, bounds=(0.0, 100.0)))

    @classmethod
    def get_hi_pct(cls) -> float:
        """
        Get the upper normalization percentile.

        @return: Percentile in (0, 100]
        """
        return float(cls.get_number('hi_pct', 99.5, bounds=(0.0, 100.0)))

    @classmethod
    def get_mask_sigma(cls) -> float:
        """
        Get the Gaussian smoothing width used before background thresholding.

        @return: Sigma in voxels
        """
        return float(cls.get_number('mask_sigma', 2.0, bounds=(0.0, None)))

    @classmethod
    def get_mask_threshold(cls) -> float:
        """
        Get the background threshold as a fraction of the smoothed maximum.

        @return: Threshold in (0, 1)
        """
        return float(cls.get_number('mask_threshold', 0.05, bounds=(0.0, 1.0), inclusive=False))
