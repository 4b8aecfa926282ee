"""Metrics configuration parser module."""
from core.configuration.config_parser import ConfigParser

AGGREGATIONS = ("means", "per_image")


class MetricsConfig(ConfigParser):
    """Parser for SSIM window, PSNR cap and score aggregation settings."""

    SECTION_NAME = "METRICS"

    @classmethod
    def get_ssim_sigma(cls) -> float:
        """
        Get the Gaussian SSIM window width.

        @return: Sigma in voxels
        """
        return float(cls.get_number('ssim_sigma', 1.5, bounds=(0.0, None), inclusive=False))

    @classmethod
    def get_ssim_radius(cls) -> int:
        """
        Get the SSIM window half-width; support is 2 * radius + 1 voxels per axis.

        @return: Radius in voxels
        """
        return int(cls.get_number('ssim_radius', 3, bounds=(1, None)))

    @classmethod
    def get_data_range(cls) -> float:
        """
        Get the dynamic range L used by SSIM constants and PSNR.

        @return: Data range
        """
        return float(cls.get_number('data_range', 1.0, bounds=(0.0, None), inclusive=False))

    @classmethod
    def get_psnr_cap(cls) -> float:
        """
        Get the PSNR ceiling used by loss functions.

        @return: Cap in dB
        """
        return float(cls.get_number('psnr_cap', 50.0, bounds=(0.0, None), inclusive=False))

    @classmethod
    def get_aggregation(cls) -> str:
        """
        Get the weighted-score aggregation order.
        'means' averages each metric first and applies the weighted formula to the means,
        'per_image' scores each image and averages the scores.

        @return: Aggregation name
        """
        return cls.get_choice('aggregation', 'means', AGGREGATIONS)
