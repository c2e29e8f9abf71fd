"""
DDReason Logger
Process-wide logger. Console records go to stderr through tqdm so an open
training progress bar is redrawn underneath them; the debug log rotates.
"""

import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from typing import Optional

from tqdm import tqdm

from config import CONFIG

LOG_FORMAT = "%(asctime)s | %(levelname)-8s | %(module)-10s | %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


class ProgressSafeHandler(logging.StreamHandler):
    """StreamHandler that writes via tqdm.write instead of the raw stream."""

    def emit(self, record: logging.LogRecord):
        try:
            tqdm.write(self.format(record), file=self.stream)
        except Exception:
            self.handleError(record)


def _file_handler(path: str) -> Optional[RotatingFileHandler]:
    # An empty DDR_LOG_FILE turns the debug log off
    if not path:
        return None
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    return RotatingFileHandler(path, maxBytes=CONFIG.LOG_MAX_BYTES,
                               backupCount=CONFIG.LOG_BACKUPS, encoding="utf-8")


def setup_logger(name: str = "DDReason") -> logging.Logger:
    logger = logging.getLogger(name)
    if logger.handlers:
        return logger
    logger.setLevel(logging.DEBUG)
    logger.propagate = False
    formatter = logging.Formatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT)

    console = ProgressSafeHandler(sys.stderr)
    console.setLevel(getattr(logging, CONFIG.LOG_LEVEL, logging.INFO))
    console.setFormatter(formatter)
    logger.addHandler(console)

    try:
        handler = _file_handler(CONFIG.LOG_FILE)
    except OSError as e:
        logger.warning(f"Debug log disabled, cannot open {CONFIG.LOG_FILE}: {e}")
        handler = None
    if handler is not None:
        handler.setLevel(logging.DEBUG)
        handler.setFormatter(formatter)
        logger.addHandler(handler)
    return logger


def set_console_level(level: int):
    """Threshold for console records only; the debug log keeps everything."""
    for handler in log.handlers:
        if isinstance(handler, ProgressSafeHandler):
            handler.setLevel(level)


log = setup_logger()
