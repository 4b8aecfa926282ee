import shutil

from _tests.fixtures import *
from core.common_paths import DEFAULT_CONFIG_PATH, LOG_DIR
from core.configuration.config_parser import ConfigParser
from core.logger import Log


def clean_logs_directory():
    """Clean logs directory by removing all files."""
    if LOG_DIR.exists():
        shutil.rmtree(LOG_DIR)

    LOG_DIR.mkdir(parents=True, exist_ok=True)


@pytest.fixture(autouse=True)
def reset_step_counter():
    """Reset step counter before each test."""
    Log.reset_step_counter()
    yield
    Log.reset_step_counter()


@pytest.fixture(autouse=True)
def default_framework_config():
    """Every test starts from config/config.ini, whatever a previous test pointed the parser at."""
    ConfigParser.set_config_path(DEFAULT_CONFIG_PATH)
    yield
    ConfigParser.set_config_path(DEFAULT_CONFIG_PATH)


def pytest_configure(config):
    """Configure test session."""
    if not hasattr(config, 'workerinput'):  # Not running in worker
        clean_logs_directory()
