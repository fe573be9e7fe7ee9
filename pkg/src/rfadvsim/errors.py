"""Exception types shared across the package."""


class RfAdvError(Exception):
    """Base class for all package errors."""


class InputLengthError(RfAdvError, ValueError):
    pass


class FormatError(RfAdvError, ValueError):
    """Malformed binary file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DimensionError(RfAdvError, ValueError):
    pass


class TrainingError(RfAdvError, RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class DegenerateError(RfAdvError, ArithmeticError):
    """A normalization or decomposition hit a zero (or vanishing) quantity."""


class NumericError(RfAdvError, ArithmeticError):
    pass


class ConfigError(RfAdvError, ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
