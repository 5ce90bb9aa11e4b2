"""Exception types shared across the package."""


class ThermoRIError(Exception):
    pass


class DomainError(ThermoRIError, ValueError):
    """Input outside the domain of an operation (non-finite data, t outside [0, T], ...)."""


class NearBoundaryError(ThermoRIError):
    """Evaluation requested within the guard distance of the yield surface.

    ``distance`` is the signed boundary distance of the offending covector
    (positive inside the elastic region).
    """

    def __init__(self, message, distance):
        super().__init__(message)
        self.distance = distance


class ToleranceError(ThermoRIError):
    """A quadrature did not reach its requested tolerance."""


class ConvergenceError(ThermoRIError):
    """An iterative solver stopped before meeting its stopping criterion."""

    def __init__(self, message, best=None, residual=None, step=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.step = step


class SamplerError(ThermoRIError):
    """MCMC diagnostics out of range or an unsamplable transition density."""


class FiniteEnergyViolation(ThermoRIError):
    """The limiting flow approached the yield surface (finite-energy criterion failed)."""

    def __init__(self, message, time=None, distance=None):
        super().__init__(message)
        self.time = time
        self.distance = distance
