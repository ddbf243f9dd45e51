"""Exception hierarchy shared by every module."""


class PCPriorError(Exception):
    """Base class for all library errors."""


class DomainError(PCPriorError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class FeasibilityError(PCPriorError):
    """A tail statement cannot be satisfied by any rate.

    ``attainable`` holds the open interval of probabilities that the prior
    family can reach; ``bound`` optionally carries a closed-form bound quoted
    in error messages (for example ``sqrt((1 - U) / 2)``).
    """

    def __init__(self, message, attainable=None, bound=None):
        super().__init__(message)
        self.attainable = attainable
        self.bound = bound


class NumericalError(PCPriorError, ArithmeticError):
    """Quadrature, root finding or a consistency check failed."""


class DegenerateComponentError(PCPriorError):
    """Model components cannot be told apart (zero or indefinite curvature)."""


class UnsupportedError(PCPriorError):
    """The requested transform is not supported for this distance."""
