"""shiftkit exceptions."""
from typing import Optional


class ShiftKitError(Exception):
    """Abstract shiftkit error."""


class ConfigError(ShiftKitError):
    """Raised when an experiment or component configuration is invalid."""


class InputDomainError(ShiftKitError, ValueError):
    """Raised when an operation receives inputs outside its domain."""


class UnsupportedModeError(ShiftKitError):
    """Raised when a requested mode of operation is not supported."""


class TrainingError(ShiftKitError):
    """Raised when a training loop diverges (NaN or infinite loss)."""


class AdaptationError(ShiftKitError):
    """Raised when an adapter fails numerically."""


class DataLoadError(ShiftKitError):
    """Raised when a data file cannot be parsed.

    `line` is the 1-based line number of the offending row, if the error
    is row-level.
    """

    line: Optional[int]

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class RunTooShortError(DataLoadError):
    """Raised when a run is too short to cut both segments from."""


class CheckpointError(ShiftKitError):
    """Raised when a model or dictionary checkpoint cannot be loaded."""


class StoreError(ShiftKitError):
    """Raised for generic result store errors."""


class StoreInitError(StoreError):
    """Raised when a result store cannot be initialized."""


class ReportError(ShiftKitError):
    """Raised when a benchmark report cannot be written or read."""
