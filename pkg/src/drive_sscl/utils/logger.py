"""
Logging utilities for drive-sscl.

Handlers write to stderr so that tables sent to stdout (``--out -``) stay clean.
"""

import logging
import sys

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def get_logger(name: str, level: int = logging.INFO) -> logging.Logger:
    """
    Get a configured logger instance.

    Args:
        name: Logger name
        level: Logging level

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)

    # Don't add handlers if they already exist
    if logger.handlers:
        return logger

    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))

    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False

    return logger


def setup_logging(level: str = "INFO") -> None:
    """
    Setup global logging configuration.

    Args:
        level: Logging level as string
    """
    numeric_level = getattr(logging, level.upper(), logging.INFO)

    logging.basicConfig(
        level=numeric_level,
        format=LOG_FORMAT,
        handlers=[logging.StreamHandler(sys.stderr)],
        force=True,
    )
    # loggers handed out by get_logger keep their own handler; lower them too
    for name in list(logging.root.manager.loggerDict):
        if name.startswith("drive_sscl"):
            existing = logging.getLogger(name)
            existing.setLevel(numeric_level)
            for handler in existing.handlers:
                handler.setLevel(numeric_level)
