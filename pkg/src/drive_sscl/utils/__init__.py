"""
Utility modules for drive-sscl.
"""

from .logger import get_logger, setup_logging
from .config_io import load_run_config

__all__ = [
    "get_logger",
    "setup_logging",
    "load_run_config",
]
