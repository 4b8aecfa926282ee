"""Slab configuration parser module."""
from core.configuration.config_parser import ConfigParser


class SlabConfig(ConfigParser):
    """Parser for slab sampling and stitching defaults."""

    SECTION_NAME = "SLAB"

    @classmethod
    def get_slab_depth(cls) -> int:
        """@return: Number of axial slices per slab"""
        return int(cls.get_number('slab_depth', 40, bounds=(1, None)))

    @classmethod
    def get_stride(cls) -> int:
        """@return: Start-index step between consecutive inference slabs"""
        return int(cls.get_number('stride', 5, bounds=(1, None)))
