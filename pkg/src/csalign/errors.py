"""Exception types shared across the toolkit."""


class CsalignError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(CsalignError, ValueError):
    """Operands have incompatible or invalid dimensions."""


class ParameterError(CsalignError, ValueError):
    """A configuration value or argument is out of its valid range."""


class SampleSizeError(CsalignError, ValueError):
    """Too few samples for the requested estimator or statistic."""


class DegenerateInputError(CsalignError, ValueError):
    """Input is degenerate (all-identical points, all-zero matrix, ...)."""


class NumericError(CsalignError, ArithmeticError):
    """A numeric routine failed to converge or produced non-finite values."""


class StateError(CsalignError, RuntimeError):
    """An operation was applied to an object in the wrong state."""


class PatchingError(CsalignError, ValueError):
    """A signal is too short to be split into full-length patches."""


class ConfigError(CsalignError, ValueError):
    """A run configuration file or flag set is invalid."""
