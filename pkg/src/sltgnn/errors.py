"""Exception hierarchy shared by every sltgnn module."""


class SltgnnError(Exception):
    """Base class for all errors raised by this package."""


class InputError(SltgnnError, ValueError):
    """Bad argument: out-of-range index, shape mismatch, empty input."""


class ConfigError(SltgnnError, ValueError):
    """Inconsistent model, plan or run configuration."""


class FormatError(SltgnnError, ValueError):
    """Malformed packed-model file."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(SltgnnError):
    """A dataset file is missing or inconsistent."""

    def __init__(self, message: str, path=None):
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path


class TrainingDivergence(SltgnnError, RuntimeError):
    """Loss became NaN or infinite."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss
