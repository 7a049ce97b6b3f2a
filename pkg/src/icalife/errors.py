"""Exception hierarchy shared by all icalife modules.

Validation errors (bad inputs, bad config, malformed datasets) map to CLI
exit code 2; runtime errors (numerical failures, fit failures) map to 1.
"""

from __future__ import annotations


class IcalifeError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(IcalifeError):
    """Input violates a documented precondition or invariant."""


class DatasetNotFoundError(ValidationError):
    """Dataset directory or a required file in it is missing."""


class ParseError(ValidationError):
    """A dataset file could not be parsed; carries file and line."""

    def __init__(self, path, line_no: int, message: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class EolUndeterminedError(IcalifeError):
    """SoH trajectory never crosses the end-of-life threshold."""


class DegenerateCurveError(IcalifeError):
    """Too few usable voltage steps to form an IC curve."""


class FeatureWindowError(IcalifeError):
    """IC curve does not cover the fixed feature window."""


class NoPositiveSlopeError(FeatureWindowError):
    """No positive IC slope inside the feature window (F4/F5 unavailable)."""


class UndefinedCorrelationError(IcalifeError):
    """Rank correlation undefined (constant input vector)."""


class UndefinedMetricError(IcalifeError):
    """Metric undefined for the given inputs (e.g. zero true-value range)."""


class NumericalError(IcalifeError):
    """Numerical failure: factorization breakdown, non-finite objective."""


class FitError(IcalifeError):
    """A regressor failed to fit (rank deficiency, no convergence)."""


class TrainingError(FitError):
    """Iterative training failed (named expert, or non-finite loss)."""
