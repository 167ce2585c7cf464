"""Exception types shared across the package."""


class QuadvarError(Exception):
    """Base class for all package errors."""


class InvalidInputError(QuadvarError, ValueError):
    """An argument violates a documented precondition."""


class NumericalError(QuadvarError, ArithmeticError):
    """A numerical routine failed (non-convergence, degenerate factorization)."""


class OrderNotFoundError(QuadvarError):
    """Step 1 found no threshold crossing; carries the scanned trace."""

    def __init__(self, message, qv_by_order=None):
        super().__init__(message)
        self.qv_by_order = list(qv_by_order or [])
