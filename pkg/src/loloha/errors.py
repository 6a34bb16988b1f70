"""Exception types raised across the package.

All of them derive from ``ValueError`` so callers that only care about
"bad input" can catch that.
"""


class ParameterError(ValueError):
    """A mechanism parameter is outside its valid range."""


class DomainError(ValueError):
    """A value lies outside the mechanism's input domain."""


class BudgetError(ParameterError):
    """A privacy budget pair is inconsistent or infeasible for a protocol."""


class DegenerateMechanismError(ParameterError):
    """The channel cannot be inverted (e.g. ``p == q``)."""


class MalformedBatchError(ValueError):
    """A report batch is missing tags or has inconsistent shapes."""


class ParseError(ValueError):
    """A sequence file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
