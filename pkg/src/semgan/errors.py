"""Exception types shared across the package.

The CLI maps ConfigError (and argparse usage failures) to exit code 2 and
every other SemGanError to exit code 3.
"""


class SemGanError(Exception):
    """Base class for all package errors."""


class ConfigError(SemGanError, ValueError):
    """Invalid configuration or invalid combination of arguments."""


class LabelRangeError(SemGanError, ValueError):
    """A label id falls outside the valid class range."""


class ShapeError(SemGanError, ValueError):
    """An array or tensor has an incompatible shape."""


class DatasetError(SemGanError, RuntimeError):
    """A dataset on disk is missing, malformed, or inconsistent."""


class CheckpointError(SemGanError, RuntimeError):
    """A checkpoint file is corrupt, truncated, or shape-incompatible."""


class NumericalError(SemGanError, RuntimeError):
    """A numerical routine left its domain of validity."""


class TrainingDivergedError(SemGanError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, message: str):
        super().__init__(message)
        self.step = step
