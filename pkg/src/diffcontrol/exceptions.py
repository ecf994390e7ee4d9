"""Exception types shared across the package."""


class DiffControlError(Exception):
    """Base class for all package errors."""


class InvalidRangeError(DiffControlError, ValueError):
    pass


class ShapeMismatchError(DiffControlError, ValueError):
    pass


class StepIndexError(DiffControlError, IndexError):
    pass


class ContractViolation(DiffControlError, ValueError):
    pass


class DivergenceError(DiffControlError, FloatingPointError):
    """Raised when sampling or training produces non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class InvalidConfigError(DiffControlError, ValueError):
    pass


class UnknownTaskError(DiffControlError, KeyError):
    pass


class DemoTooShortError(DiffControlError, ValueError):
    pass


class CheckpointError(DiffControlError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class DigestMismatchError(CheckpointError):
    pass


class TruncatedFileError(CheckpointError):
    pass


class KindMismatchError(CheckpointError):
    pass


class MissingCheckpointError(DiffControlError, FileNotFoundError):
    pass


class EnvironmentFault(DiffControlError, RuntimeError):
    pass


class TooFewReplansError(DiffControlError, ValueError):
    pass


class EmptyCellError(DiffControlError, ValueError):
    pass
