"""Shared exception types."""


class InvalidArgumentError(ValueError):
    """Caller passed a value that violates an operation's contract."""


class ConfigMismatchError(InvalidArgumentError):
    """Two configurations that must agree (model vs. data, model vs. file) do not."""


class FormatError(Exception):
    """A binary file failed validation. Carries the byte offset of the failure."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""
