"""Exception types raised across the package."""


class PscdError(Exception):
    """Base class for all package errors."""


class NumericalError(PscdError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class InvalidGamma(PscdError, ValueError):
    pass


class InvalidOrder(PscdError, ValueError):
    pass


class InvalidParameter(PscdError, ValueError):
    pass


class InvalidShape(PscdError, ValueError):
    pass


class InvalidModelKind(PscdError, TypeError):
    pass


class InvalidState(PscdError, ValueError):
    pass


class InvalidSpec(PscdError, ValueError):
    pass


class InvalidInput(PscdError, ValueError):
    pass


class EmptyBatch(PscdError, ValueError):
    pass


class DivergedChain(PscdError, ArithmeticError):
    """A Langevin chain produced a non-finite state."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"chain state became non-finite at step {step}")


class InvalidSchedule(PscdError, ValueError):
    """A step-size schedule violates the randomized-SGD bound."""

    def __init__(self, t: int, eta: float, limit: float):
        self.t = t
        self.eta = eta
        self.limit = limit
        super().__init__(f"step size at t={t} is {eta!r}, must be < {limit!r}")
