"""Exception hierarchy.

Every error carries the name of the module that raised it so the CLI can
report provenance alongside the message.
"""


class NMApproxError(Exception):
    """Base class for library errors."""

    def __init__(self, message: str, module: str = "nmapprox"):
        super().__init__(message)
        self.module = module


class InvalidParameterError(NMApproxError, ValueError):
    pass


class BudgetExceededError(NMApproxError):
    """A computation would need more summands, cells or draws than allowed."""


class OutOfBulkError(NMApproxError, ValueError):
    """Lattice point lies outside the bulk set and no override was given."""


class NumericalError(NMApproxError, ArithmeticError):
    """Non-converged quadrature, non-finite value, or an impossible fit."""


class UnsupportedMomentError(NMApproxError, ValueError):
    """Mixed fourth-order moments have no closed form here."""
