"""Exception types shared across the package."""


class NumericalFailure(RuntimeError):
    """A linear-algebra operation failed even after jitter escalation."""


class EmptyTargetError(ValueError):
    """An estimand weight vector came out identically zero."""


class PoolExhaustedError(RuntimeError):
    """A selection was requested from a pool with no available candidates."""


class UnfittedModelError(RuntimeError):
    """An operation required a fitted model arm that has no observations."""
