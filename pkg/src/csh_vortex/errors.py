"""Exception types raised by the solver."""


class CSHError(Exception):
    """Base class for all solver errors."""


class RankError(CSHError, ValueError):
    pass


class InvalidCoefficientError(CSHError, ValueError):
    pass


class DomainError(CSHError, ValueError):
    """A vortex point lies outside the fundamental cell."""


class GridMismatchError(CSHError, ValueError):
    pass


class StateRangeError(CSHError, FloatingPointError):
    """Exponentials of the state overflowed the guard threshold."""

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class ConstraintViolationError(CSHError):
    """A discriminant of the constants system went negative."""


class NonConvergenceError(CSHError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class BoundaryError(CSHError):
    """State is on or outside the boundary of the admissible set."""

    def __init__(self, message, margins=None, threshold=None):
        super().__init__(message)
        self.margins = margins
        self.threshold = threshold


class GradientUndefinedError(BoundaryError):
    pass
