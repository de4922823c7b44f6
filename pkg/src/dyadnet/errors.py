"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class DyadnetError(Exception):
    """Base class for all package errors."""


class ConfigError(DyadnetError):
    """Invalid or inconsistent configuration."""


class DataError(DyadnetError):
    """Problem with input data files or their contents."""


class ParseError(DataError):
    """Malformed row or field. Carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class IntegrityError(DataError):
    """Referential or uniqueness violation (duplicate id, unknown endpoint)."""


class DomainError(DyadnetError, ValueError):
    """Argument outside its mathematical domain."""


class NumericalError(DyadnetError):
    """Optimization or linear-algebra failure."""


class OptimizationError(NumericalError):
    """Divergent or otherwise failed fit."""


class RankDeficiencyError(NumericalError):
    """Singular information matrix. Lists the collinear columns."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class SeparationError(OptimizationError):
    """Perfect separation: the MLE does not exist at finite coefficients."""


class EmptyTetradError(DataError):
    """No tetrad satisfies the conditioning events."""


class IdentificationError(NumericalError):
    """No usable variation left in the conditional-logit regressors."""


class SeparationWarning(UserWarning):
    """Likely separation: coefficients drifting without gradient progress."""
