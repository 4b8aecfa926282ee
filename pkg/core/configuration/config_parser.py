"""Base configuration parser module."""
import ast
import configparser
from functools import lru_cache
from pathlib import Path
from typing import Any, ClassVar, Optional, TypeVar, Generic, Tuple

from core.common_paths import DEFAULT_CONFIG_PATH
from core.logger import Log

# Generic type definition
T = TypeVar('T')


class ConfigParser(Generic[T]):
    """
    Base parser for framework configuration files.
    Generic base class for specific configuration sections of config/config.ini.
    T determines the type of configuration settings this parser handles.
    """

    _instance: ClassVar[Optional[configparser.ConfigParser]] = None
    _config_path: ClassVar[Optional[Path]] = None

    SECTION_NAME: str = ""  # To be overridden by subclasses

    @classmethod
    def _get_instance(cls) -> configparser.ConfigParser:
        """
        Get or create singleton instance of ConfigParser.

        @return: ConfigParser instance
        """
        if ConfigParser._instance is None:
            ConfigParser._instance = configparser.ConfigParser(
                interpolation=configparser.ExtendedInterpolation()
            )

            if ConfigParser._config_path is None:
                ConfigParser._config_path = DEFAULT_CONFIG_PATH

            if ConfigParser._config_path.exists():
                ConfigParser._instance.read(str(ConfigParser._config_path))
            else:
                Log.warning(f"Config file not found at {ConfigParser._config_path}")

        return ConfigParser._instance

    @classmethod
    def set_config_path(cls, path: Path) -> None:
        """Set custom configuration file path and reset cache."""
        ConfigParser._config_path = Path(path)
        ConfigParser._instance = None
        cls.clear_cache()

    @classmethod
    @lru_cache(maxsize=64)
    def get_value(cls, key: str, fallback: Any = None) -> Any:
        """Get value from configuration with type conversion and caching."""
        config = cls._get_instance()
        try:
            if not config.has_section(cls.SECTION_NAME) or not config.has_option(cls.SECTION_NAME, key):
                return fallback

            value_str = config.get(cls.SECTION_NAME, key)

            # Special handling for boolean values
            if isinstance(fallback, bool):
                return value_str.strip().lower() == 'true'

            try:
                return ast.literal_eval(value_str)
            except (ValueError, SyntaxError):
                return value_str

        except Exception as e:
            Log.error(f"Error getting config value {cls.SECTION_NAME}.{key}: {str(e)}")
            return fallback

    @classmethod
    def get_number(cls, key: str, default: float, bounds: Tuple[Optional[float], Optional[float]] = (None, None),
                   inclusive: bool = True) -> float:
        """
        Get a numeric value, falling back to the default when it is missing or out of bounds.

        @param key: Option name
        @param default: Value used when the option is absent or invalid
        @param bounds: (low, high) limits, None for unbounded
        @param inclusive: Whether the bounds themselves are allowed
        @return: Validated number
        """
        value = cls.get_value(key, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            Log.warning(f"Invalid {cls.SECTION_NAME}.{key} value: {value!r}, using {default}")
            return default

        low, high = bounds
        too_low = low is not None and (value < low if inclusive else value <= low)
        too_high = high is not None and (value > high if inclusive else value >= high)
        if too_low or too_high:
            Log.warning(f"{cls.SECTION_NAME}.{key}={value} outside {bounds}, using {default}")
            return default
        return value

    @classmethod
    def get_choice(cls, key: str, default: str, choices: Tuple[str, ...]) -> str:
        """
        Get a string value restricted to a set of choices.

        @param key: Option name
        @param default: Value used when the option is absent or invalid
        @param choices: Allowed values
        @return: Validated choice
        """
        value = str(cls.get_value(key, default)).strip().lower()
        if value not in choices:
            Log.warning(f"Invalid {cls.SECTION_NAME}.{key} value '{value}' (valid: {choices}), using '{default}'")
            return default
        return value

    @classmethod
    def clear_cache(cls) -> None:
        """Clear all cached values."""
        ConfigParser.get_value.cache_clear()
