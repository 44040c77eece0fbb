"""Exception hierarchy shared by all eqsearch modules."""


class EqSearchError(Exception):
    """Base class for all package errors."""


class IntegrationError(EqSearchError):
    """Numerical integration produced non-finite or invalid states."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class CalibrationError(EqSearchError):
    """Noise amplitude could not be calibrated to the requested level."""


class UndefinedMetricError(EqSearchError):
    """A metric is undefined for the given input (e.g. zero reference norm)."""


class IllConditionedWindowError(EqSearchError):
    """A local polynomial fit window is rank deficient."""


class UnevaluableTokenError(EqSearchError):
    """A token cannot be evaluated with the available data."""


class GenerationExhaustedError(EqSearchError):
    """Random generation could not produce the requested distinct structures."""


class IllPosedFitError(EqSearchError):
    """The regression system is degenerate."""


class TrivialEquationError(EqSearchError):
    """Sparsification removed every non-target term."""


class NotSolvableError(EqSearchError):
    """An equation cannot be put into explicit time-integrable form."""


class ConfigError(EqSearchError):
    """Invalid experiment or algorithm configuration."""
