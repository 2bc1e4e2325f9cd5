"""
Logging configuration for rnn-td
"""

import logging
import sys
from datetime import datetime
from typing import Optional, Union

from src.core.config import Config

ROOT_LOGGER = "rnn_td"


def setup_logger(
    name: str = ROOT_LOGGER,
    log_level: Union[int, str, None] = None,
    log_to_file: bool = True,
) -> logging.Logger:
    """
    Setup and configure logger

    Args:
        name (str): Logger name
        log_level (int | str): Logging level, defaults to Config.LOG_LEVEL
        log_to_file (bool): Also write the daily log file

    Returns:
        logging.Logger: Configured logger instance
    """

    logger = logging.getLogger(name)
    logger.setLevel(log_level or Config.LOG_LEVEL)

    # Prevent duplicate handlers
    if logger.handlers:
        return logger

    logger.propagate = False

    detailed_formatter = logging.Formatter(
        "%(asctime)s | %(levelname)s | %(name)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S"
    )

    simple_formatter = logging.Formatter(
        "%(levelname)s | %(message)s"
    )

    # File Handler (Daily log file)
    if log_to_file:
        try:
            Config.ensure_directories()
            log_file = Config.LOGS_DIR / f"rnn_td_{datetime.now().strftime('%Y-%m-%d')}.log"
            file_handler = logging.FileHandler(log_file, encoding="utf-8")
            file_handler.setLevel(logging.DEBUG)
            file_handler.setFormatter(detailed_formatter)
            logger.addHandler(file_handler)
        except OSError:
            pass

    # Console Handler; stdout carries command output
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(logging.INFO)
    console_handler.setFormatter(simple_formatter)
    logger.addHandler(console_handler)

    return logger


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """Return a child of the package logger, e.g. ``rnn_td.trainer``"""
    if not name:
        return logging.getLogger(ROOT_LOGGER)
    short = name.rsplit(".", 1)[-1]
    return logging.getLogger(f"{ROOT_LOGGER}.{short}")
