"""Exception hierarchy shared by the simulation modules."""

from __future__ import annotations


class NQError(Exception):
    """Base class for all errors raised by nqsim."""


class InvalidParameterError(NQError, ValueError):
    """A rate, horizon, threshold or seed is outside its allowed range."""


class InvalidEventError(NQError, ValueError):
    """An event was delivered to a system that cannot process it."""


class CorruptedTraceError(NQError, RuntimeError):
    """An event references a job the system has never seen."""


class InvalidInputError(NQError, ValueError):
    """A checker received a trace of the wrong shape."""


class BoundaryPointError(InvalidParameterError):
    """A sweep point lies exactly on a stability boundary line."""


class InsufficientDataError(NQError, RuntimeError):
    """Too few post-warm-up samples to compute a statistic."""


class UnstableParametersError(InvalidParameterError):
    """Parameters outside the stability region where a stationary law is required."""
