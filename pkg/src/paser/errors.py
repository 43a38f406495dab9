"""Exception hierarchy shared by every paser module."""


class PaserError(Exception):
    """Base class for all errors raised by paser."""


class ShapeError(PaserError, ValueError):
    """Raised when tensor shapes do not match an operation's signature."""

    def __init__(self, message: str, expected: object = None, actual: object = None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class NonFiniteError(PaserError, ArithmeticError):
    """Raised when a forward or backward pass produces NaN or Inf."""

    def __init__(self, message: str, op: str | None = None):
        super().__init__(message)
        self.op = op


class GradientError(PaserError):
    """Raised for invalid backward passes or mismatched gradient maps."""


class FormatError(PaserError, ValueError):
    """Raised when a binary file (IDX, PASERDS, PASR1) cannot be parsed."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(message)
        self.path = path


class ConfigError(PaserError):
    """Raised when an experiment configuration is invalid."""


class MissingStageError(PaserError):
    """Raised when a pipeline stage runs before its prerequisite stage."""

    def __init__(self, message: str, stage: str):
        super().__init__(message)
        self.stage = stage


class TrainingDivergedError(PaserError):
    """Raised when a training loss becomes non-finite."""

    def __init__(self, message: str, stage: str, epoch: int):
        super().__init__(message)
        self.stage = stage
        self.epoch = epoch
