"""Exception types shared across the package."""


class KcLstmError(Exception):
    """Base class for package errors."""


class DimensionError(KcLstmError, ValueError):
    """Array shapes do not agree with the model parameters."""


class DivergenceError(KcLstmError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, loss=float("nan")):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite training loss ({loss}) at epoch {epoch}")


class TraceStateError(KcLstmError, RuntimeError):
    """A hidden trace is missing its smoothed states."""


class UndefinedMaseError(KcLstmError, ZeroDivisionError):
    """MASE scaling denominator is zero (constant series)."""


class DataFormatError(KcLstmError, ValueError):
    """Malformed input file."""
