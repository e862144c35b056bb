import logging
import sys
from logging.handlers import TimedRotatingFileHandler
from pathlib import Path
from typing import Optional

LOG_FORMAT = '%(asctime)s [%(levelname)s] %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


def setup_logger(name: str, log_file: str, level: str = "INFO", propagate: bool = True) -> logging.Logger:
    """Configure and return a logger writing to a daily-rotated file."""
    # Create logs directory if it doesn't exist
    log_dir = Path(log_file).parent
    log_dir.mkdir(parents=True, exist_ok=True)

    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.propagate = propagate

    target = str(Path(log_file).resolve())
    for existing in logger.handlers:
        if isinstance(existing, TimedRotatingFileHandler) and existing.baseFilename == target:
            return logger

    handler = TimedRotatingFileHandler(
        log_file,
        when='D',  # Daily rotation
        interval=1,
        backupCount=90,  # Keep 90 days of logs
        encoding='utf-8'
    )
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    logger.addHandler(handler)
    return logger


class StderrHandler(logging.StreamHandler):
    """Writes to whatever ``sys.stderr`` is at emit time."""

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, value):
        pass


def configure_logging(level: Optional[str] = None, verbose: bool = False) -> logging.Logger:
    """Package logger: run log file plus stderr diagnostics (stdout is reserved for results)."""
    from ..config import config

    level = level or ("DEBUG" if verbose else config.LOG_LEVEL)
    logger = setup_logger("fdftnet", config.RUN_LOG_FILE_PATH, level)
    stream = next((h for h in logger.handlers if isinstance(h, StderrHandler)), None)
    if stream is None:
        stream = StderrHandler()
        stream.setFormatter(logging.Formatter('[%(levelname)s] %(message)s'))
        logger.addHandler(stream)
    stream.setLevel(logging.DEBUG if verbose else logging.WARNING)
    return logger
