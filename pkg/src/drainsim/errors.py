"""Exception hierarchy shared by every drainsim module."""

from __future__ import annotations


class DrainSimError(Exception):
    """Base class for all library errors."""


class InvalidArgument(DrainSimError, ValueError):
    pass


class ValidationError(DrainSimError, ValueError):
    """Raised when a document or value violates one or more invariants.

    ``violations`` holds the complete list, not only the first problem found.
    """

    def __init__(self, violations, context: str = ""):
        self.violations = list(violations)
        head = f"{context}: " if context else ""
        super().__init__(head + "; ".join(self.violations))


class UnsupportedGoal(ValidationError):
    pass


class CalibrationError(DrainSimError):
    pass


class InfeasiblePlan(DrainSimError):
    def __init__(self, report):
        self.report = report
        super().__init__(report.summary())


class StealthNotConfigured(DrainSimError):
    pass


class SuperAdditiveWarning(UserWarning):
    """A fitted interference coefficient came out above 1."""
