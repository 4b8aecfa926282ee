"""
Pipeline logging.

One static `Log` facade writes to the console and, once a run directory is known,
to <out_dir>/logs/pipeline.log. Phases are logged as numbered STEP records; Python
warnings raised by torch, monai or nibabel are routed into the same run log.
"""
import logging
from pathlib import Path
from typing import Optional, Union

STEP_LEVEL = 35
CONSOLE_LEVEL = 15
EMPTY_LEVEL = 11
logging.addLevelName(STEP_LEVEL, "STEP")
logging.addLevelName(CONSOLE_LEVEL, "CONSOLE")
logging.addLevelName(EMPTY_LEVEL, "EMPTY")

LOGGER_NAME = "UlfEnhance"
# Loggers of other packages mirrored into the run log file
CAPTURED_LOGGERS = ("py.warnings",)


class MultiFormatter(logging.Formatter):
    """Timestamped records; EMPTY records (separators) are written as-is."""

    def __init__(self):
        super().__init__('%(asctime)s | %(levelname)-8s | %(message)s', datefmt='%Y-%m-%d %H:%M:%S')

    def format(self, record):
        if record.levelno == EMPTY_LEVEL:
            return record.getMessage()
        return super().format(record)


class ConsoleFilter(logging.Filter):
    """Terminal output: CONSOLE and above."""

    def filter(self, record):
        return record.levelno >= CONSOLE_LEVEL


class FileFilter(logging.Filter):
    """Run log files: everything except console-only chatter (progress lines)."""

    def filter(self, record):
        return record.levelno != CONSOLE_LEVEL


class Log:
    """Static logger of the enhancement pipeline."""

    _instance: Optional[logging.Logger] = None
    _log_file: Optional[Path] = None
    _step_counter: int = 0

    @classmethod
    def get_logger(cls) -> logging.Logger:
        if cls._instance is None:
            logger = logging.getLogger(LOGGER_NAME)
            logger.setLevel(logging.DEBUG)
            logger.handlers.clear()
            console = logging.StreamHandler()
            console.setFormatter(MultiFormatter())
            console.addFilter(ConsoleFilter())
            logger.addHandler(console)
            logger.propagate = False
            logging.captureWarnings(True)
            cls._instance = logger
        return cls._instance

    @classmethod
    def reset(cls) -> None:
        """Close every handler (run log files included) and restart the step count."""
        if cls._instance is not None:
            for handler in cls._instance.handlers[:]:
                handler.close()
                cls._instance.removeHandler(handler)
        cls._detach_captured()
        cls._instance = None
        cls._log_file = None
        cls._step_counter = 0

    @classmethod
    def _detach_captured(cls) -> None:
        for name in CAPTURED_LOGGERS:
            captured = logging.getLogger(name)
            for handler in captured.handlers[:]:
                if isinstance(handler, logging.FileHandler):
                    handler.close()
                    captured.removeHandler(handler)

    @classmethod
    def switch_log_file(cls, log_file: Union[str, Path]) -> None:
        """
        Write subsequent records to log_file (appending), replacing the previous run log.

        @param log_file: Log path; parent directories are created
        """
        logger = cls.get_logger()
        log_file = Path(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)

        for handler in logger.handlers[:]:
            if isinstance(handler, logging.FileHandler):
                handler.close()
                logger.removeHandler(handler)
        cls._detach_captured()

        file_handler = logging.FileHandler(log_file, mode='a', encoding='utf-8')
        file_handler.setFormatter(MultiFormatter())
        file_handler.addFilter(FileFilter())
        logger.addHandler(file_handler)
        for name in CAPTURED_LOGGERS:
            logging.getLogger(name).addHandler(file_handler)
        cls._log_file = log_file

    @classmethod
    def log_file(cls) -> Optional[Path]:
        """Current run log, None while logging to the console only."""
        return cls._log_file

    @classmethod
    def _log(cls, level: int, message: str) -> None:
        cls.get_logger().log(level, message)

    @classmethod
    def console(cls, message: str):
        """Terminal-only message, kept out of run logs."""
        cls._log(CONSOLE_LEVEL, message)

    @classmethod
    def debug(cls, message: str):
        cls._log(logging.DEBUG, message)

    @classmethod
    def info(cls, message: str):
        cls._log(logging.INFO, message)

    @classmethod
    def step(cls, message: str):
        """Numbered pipeline step (phase start, checkpoint selection, ...)."""
        cls._step_counter += 1
        cls._log(STEP_LEVEL, f"[{cls._step_counter}] {message}")

    @classmethod
    def warning(cls, message: str):
        cls._log(logging.WARNING, message)

    @classmethod
    def error(cls, message: str):
        cls._log(logging.ERROR, message)

    @classmethod
    def critical(cls, message: str):
        cls._log(logging.CRITICAL, message)

    @classmethod
    def separator(cls, char: str = '-', length: int = 80) -> None:
        cls._log(EMPTY_LEVEL, char * length)

    @classmethod
    def get_step_counter(cls) -> int:
        return cls._step_counter

    @classmethod
    def reset_step_counter(cls):
        cls._step_counter = 0
