"""Exception hierarchy shared by all modules."""


class BoomError(Exception):
    """Base class for every error raised by boomctl."""


class DomainError(BoomError, ValueError):
    """An argument lies outside the domain where a formula is defined."""


class GeometryError(DomainError):
    """Barrier linkage geometry is singular or infeasible."""


class ConfigError(BoomError, ValueError):
    """Invalid or inconsistent configuration."""


class IntegrationError(BoomError, ArithmeticError):
    """Numerical integration produced a non-finite state."""

    def __init__(self, message, time=None):
        super().__init__(message if time is None else f"{message} (t={time:.6g} s)")
        self.time = time


class IdentifiabilityError(BoomError, ValueError):
    """Regressor matrix is rank deficient."""


class NonPhysicalFitError(BoomError, ValueError):
    """Identified coefficients do not map to physical parameters."""


class ConvergenceError(BoomError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class InfeasibleError(BoomError, RuntimeError):
    """An optimization problem has no (strictly) feasible point."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InconclusiveError(ConvergenceError):
    """A verifier exhausted its budget before certifying the bound."""


class VerificationError(BoomError, RuntimeError):
    """A computed result failed its independent post-check."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump
