"""Exception types shared across the package.

Each maps to a distinct CLI exit code (see cli.EXIT_CODES).
"""


class BmsrateError(Exception):
    """Base class for all package errors."""


class ParseError(BmsrateError):
    """A data file could not be parsed; the message names the offending line."""


class ConsistencyError(BmsrateError):
    """Cross-file or cross-record invariants are violated."""


class SchemaError(BmsrateError):
    """Column labels of a design do not match the fitted model."""


class ConvergenceError(BmsrateError):
    """An iterative fit did not converge; carries the last iterate."""

    def __init__(self, message, last_fit=None):
        super().__init__(message)
        self.last_fit = last_fit


class DivergenceError(BmsrateError):
    """The likelihood is unbounded (separation or degenerate response)."""


class FoldError(BmsrateError):
    """A cross-validation fold is degenerate (e.g. no claims for a gamma fit).

    Retry with fewer folds or a different seed.
    """
