"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` (CLI exit code 2);
everything raised by a numerical routine derives from :class:`NumericError`
(CLI exit code 3).
"""


class FluxQuditError(Exception):
    """Base class for all package errors."""


class ValidationError(FluxQuditError, ValueError):
    """Invalid user input (parameters, config keys, ranges)."""


class DomainError(ValidationError):
    """A physical parameter lies outside its admissible domain."""


class NumericError(FluxQuditError, RuntimeError):
    """A numerical procedure failed to meet its contract."""


class GridTooSmallError(NumericError):
    """Eigenfunctions do not decay at the grid boundary."""


class ResolutionError(NumericError):
    """Discretization or step refinement is insufficient."""


class CrossingNotFoundError(NumericError):
    def __init__(self, pair, message="no interior gap minimum in range"):
        self.pair = tuple(pair)
        super().__init__(f"levels {pair[0]}-{pair[1]}: {message}")


class StiffnessError(NumericError):
    """Adaptive integrator step size underflowed."""


class TrackingError(NumericError):
    """Adiabatic eigenbasis could not be followed unambiguously."""


class IntegrationError(NumericError):
    """Density-matrix invariants broke down during integration."""

    def __init__(self, message, last_good=None):
        self.last_good = last_good
        if last_good is not None:
            message = f"{message} (last good stamp {last_good!r})"
        super().__init__(message)


class EstimateUnavailable(NumericError):
    """Not enough signal to produce the requested estimate."""
