"""Exception types raised by the public API.

Everything derives from :class:`HarcovError` so callers can catch the
package's failures with a single except clause while still letting
programming errors (TypeError and friends) propagate unchanged.
"""

from __future__ import annotations


class HarcovError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(HarcovError):
    """Array shapes are inconsistent with the operation."""


class SymmetryError(HarcovError):
    """A matrix that must be symmetric is not, beyond tolerance."""


class NotPsdError(HarcovError):
    """A matrix that must be positive semi-definite is not."""


class DegenerateVarianceError(HarcovError):
    """A variance that must be strictly positive is zero or negative."""


class CompositionError(HarcovError):
    """Correlation input to a covariance composition is invalid."""


class EmptyDayError(HarcovError):
    """An intraday return record contains no observations."""


class InsufficientHistoryError(HarcovError):
    """Too few time-series observations for the requested operation."""


class CollinearityError(HarcovError):
    """A regression design matrix is rank deficient."""


class DomainError(HarcovError):
    """An input lies outside the mathematical domain of the model."""


class ParameterError(HarcovError):
    """A model parameter violates its admissible range."""


class InitializationError(HarcovError):
    """Optimizer start values could not be produced or evaluated."""


class SingularForecastError(HarcovError):
    """A forecast matrix is too close to singular for the requested loss."""


class AlignmentError(HarcovError):
    """Two panels that must share dates do not."""


class DegenerateDriftError(HarcovError):
    """Portfolio value change is too close to -100% to renormalize weights."""


class UndefinedSharpeError(HarcovError):
    """Return series has zero variance, Sharpe ratio undefined."""


class InfeasibleUtilityError(HarcovError):
    """No fee equates the two utility sums (negative discriminant)."""


class ConfigError(HarcovError):
    """A configuration value or file is invalid."""


class AllModelsFailedError(HarcovError):
    """Every model failed on every out-of-sample day."""
