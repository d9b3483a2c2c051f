"""
Custom exceptions for the drive-sscl library.
"""

from typing import Any, Optional


class DriveSSCLError(Exception):
    """Base exception for all drive-sscl errors."""
    pass


class ConfigurationError(DriveSSCLError):
    """Raised when configuration is invalid or cannot be satisfied."""
    pass


class ArgumentError(ConfigurationError, ValueError):
    """Raised when a function receives arguments outside its contract."""
    pass


class DataError(DriveSSCLError):
    """Raised when input data is malformed or inconsistent."""
    pass


class TrackParseError(DataError):
    """Raised when a tracking file line cannot be parsed."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class RejectedRecordError(DataError):
    """Raised when a parsed tracking record violates a data invariant."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(f"{prefix}{message}")
        self.line_number = line_number


class FileError(DriveSSCLError):
    """Raised when file operations fail."""
    pass


class UsageError(DriveSSCLError):
    """Raised when an API is called out of order."""
    pass


class OptimizationError(DriveSSCLError):
    """Raised when an optimizer step cannot be applied."""
    pass


class TrainingDivergedError(OptimizationError):
    """Raised when the training loss stops being finite."""

    def __init__(self, message: str, last_params: Any = None):
        super().__init__(message)
        self.last_params = last_params
