"""Runtime configuration parser module."""
from core.configuration.config_parser import ConfigParser


class RuntimeConfig(ConfigParser):
    """Parser for device and reproducibility settings."""

    SECTION_NAME = "RUNTIME"

    @classmethod
    def get_device(cls) -> str:
        """
        Get torch device string used when a pipeline config does not name one.

        @return: Device name, e.g. 'cpu' or 'cuda:0'
        """
        return str(cls.get_value('device', 'cpu'))

    @classmethod
    def is_deterministic(cls) -> bool:
        """
        Check if torch deterministic algorithms should be requested.

        @return: True if deterministic mode is on
        """
        return cls.get_value('deterministic', True)

    @classmethod
    def get_num_threads(cls) -> int:
        """
        Get intra-op thread count; 0 keeps the torch default.

        @return: Thread count
        """
        return int(cls.get_number('num_threads', 0, bounds=(0, None)))
