"""Typed errors raised across the package.

Every failure mode that callers are expected to handle gets its own class so
that the CLI can report the error name and tests can assert on it.
"""


class DiffdenError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(DiffdenError):
    pass


class NotPositiveDefinite(DiffdenError):
    pass


class InvalidSize(DiffdenError):
    pass


class NegativeTime(DiffdenError):
    pass


class SingularTime(DiffdenError):
    pass


class EmptyDataset(DiffdenError):
    pass


class NoAnalyticScore(DiffdenError):
    pass


class NonFiniteState(DiffdenError):
    pass


class RejectionBudgetExceeded(DiffdenError):
    pass


class OutOfSupport(DiffdenError):
    pass


class ConvergenceFailure(DiffdenError):
    pass


class BadPointCount(DiffdenError):
    pass


class PreconditionViolated(DiffdenError):
    pass


class DimensionTooLarge(DiffdenError):
    pass


class EmptyReport(DiffdenError):
    pass
