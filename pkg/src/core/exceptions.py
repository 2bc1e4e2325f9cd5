"""
Custom exceptions for rnn-td
"""
from typing import Optional


class RnnTdError(Exception):
    """Base exception for the rnn-td package"""
    pass


class UsageError(RnnTdError):
    """Exception raised for bad command-line usage"""
    pass


class DataError(RnnTdError):
    """Exception raised when corpus or vocabulary data cannot be used"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ValidationError(RnnTdError):
    """Exception raised for precondition failures"""
    pass


class DimensionError(ValidationError):
    """Exception raised when array shapes are incompatible"""
    pass


class CheckpointError(RnnTdError):
    """Exception raised when a checkpoint cannot be written or read"""
    pass


class NumericalError(RnnTdError):
    """Exception raised for numerical failures"""
    pass


class QuadratureError(NumericalError):
    """Exception raised when adaptive quadrature does not converge"""

    def __init__(self, message: str, best_estimate: float):
        super().__init__(f"{message} (best estimate {best_estimate!r})")
        self.best_estimate = best_estimate


class InfiniteExpectedTimeError(NumericalError):
    """Exception raised when the expected next-event time diverges"""

    def __init__(self, message: str = "infinite expected time"):
        super().__init__(message)


class DivergenceError(NumericalError):
    """Exception raised when training produces a non-finite loss"""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class BoundViolationError(NumericalError):
    """Exception raised when a thinning bound does not dominate the intensity"""
    pass
