"""Exception types shared across the package."""


class DecolabError(Exception):
    """Base class for all errors raised by decolab."""


class ValidationError(DecolabError, ValueError):
    """An input violates a documented precondition."""


class DegenerateSpectrum(DecolabError):
    """A reduced density operator has (near-)degenerate eigenvalues."""


class NumericalInstability(DecolabError):
    """A time stepper blew up or was asked to take a step beyond its stability bound.

    ``suggested_dt`` carries a step size that satisfies the bound, when one
    can be estimated.
    """

    def __init__(self, message: str, suggested_dt: float | None = None):
        super().__init__(message)
        self.suggested_dt = suggested_dt
