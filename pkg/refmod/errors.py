"""
Exception types raised by refmod.

The CLI maps ValidationError (and its subclasses) to exit code 1 and every
other RefmodError to exit code 2.
"""

from typing import Optional


class RefmodError(Exception):
    """Base class for all refmod errors."""


class ValidationError(RefmodError, ValueError):
    """Invalid input value, file or configuration."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InfeasibleError(ValidationError):
    """No admissible corridor exists at some track point."""


class PlacementError(ValidationError):
    """Random obstacle placement failed after the allowed retries."""


class MissingCheckpointError(ValidationError):
    """A checkpoint directory or file required by a command does not exist."""


class TrainingDivergedError(RefmodError, RuntimeError):
    """A gradient or loss became non-finite during training."""
