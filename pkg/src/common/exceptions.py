"""
Custom exceptions for the differentiable control toolkit.
Hierarchical exception structure for better error handling and debugging.
"""
from typing import Optional


class BaseControlException(Exception):
    """Base exception for the control toolkit"""
    pass


class ConfigurationError(BaseControlException):
    """Error in configuration loading or validation"""
    pass


class ShapeMismatchError(BaseControlException):
    """Fields, tape values or network inputs do not have compatible shapes"""
    pass


class TapeError(BaseControlException):
    """Invalid use of the differentiation tape"""
    pass


class SolverError(BaseControlException):
    """Generic error raised by a PDE solver component"""
    pass


class ConvergenceError(SolverError):
    """Iterative linear solve did not reach its tolerance"""

    def __init__(self, message: str, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")


class DivergenceError(BaseControlException):
    """Optimisation produced non-finite values"""

    def __init__(self, message: str, iteration: Optional[int] = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} at iteration {iteration}"
        super().__init__(message)


class MissingScaleError(BaseControlException):
    """Observation predictor bank has no model for a requested time scale"""
    pass


class SchemeError(BaseControlException):
    """Invalid execution scheme or horizon"""
    pass


class FormatError(BaseControlException):
    """Malformed tensor file"""
    pass


class DatasetError(BaseControlException):
    """Dataset files missing, inconsistent or corrupted"""
    pass
