"""
Error hierarchy shared by the services and the command line
"""
from typing import Optional


class FluidFcfsError(Exception):
    """Base class for every error raised by the package"""

    exit_code: int = 1


class SpecParseError(FluidFcfsError):
    """The configuration document is not well-formed"""

    exit_code = 2


class SpecValidationError(FluidFcfsError):
    """The configuration document violates a system invariant"""

    exit_code = 2


class ModeError(FluidFcfsError):
    """The operation does not apply to this rate mode or graph shape"""

    exit_code = 2


class UsageError(FluidFcfsError):
    """Arguments are inconsistent with the operation's preconditions"""

    exit_code = 2


class RegimeError(FluidFcfsError):
    """Finite arrival rate below maximal throughput without an explicit override"""

    exit_code = 2


class AmbiguityError(FluidFcfsError):
    """No ordered partition, or more than one, satisfies the pooling conditions"""


class ConvergenceError(FluidFcfsError):
    """An iterative numerical routine hit its iteration cap"""


class InternalInconsistencyError(FluidFcfsError):
    """A structural guarantee was observed to fail"""


class SingularCovarianceError(FluidFcfsError):
    """Sample covariance cannot be inverted"""

    def __init__(self, message: str, condition: Optional[float] = None):
        super().__init__(message)
        self.condition = condition
