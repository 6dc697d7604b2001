"""Exception types raised by the hybrid estimation library."""


class HybridError(Exception):
    """Base class for all library errors."""


class ContractViolation(HybridError, ValueError):
    """An argument violates a documented precondition (usually a shape mismatch)."""


class NonTransverseCrossing(HybridError):
    """A guard is reached with (near) zero transversality, i.e. a grazing impact."""


class IntegrationError(HybridError):
    """The ODE integrator could not make progress (step-size underflow, non-finite state)."""


class LinearizationError(HybridError):
    """A flow map was asked to be linearized across a hybrid event."""


class ConditioningError(HybridError):
    """The innovation covariance of a Kalman update is singular or indefinite."""


class DegeneracyError(HybridError):
    """All particle weights underflowed to zero."""


class SingularConfiguration(HybridError):
    """A coordinate change was evaluated at a singular point (e.g. zero leg length)."""
