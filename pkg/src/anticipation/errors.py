"""Exception types shared across the package.

Each error message is expected to name the offending value(s); callers rely
on that when surfacing one-line diagnostics from the command line tools.
"""


class AnticipationError(Exception):
    """Base class for all package errors."""


class DimensionError(AnticipationError):
    """Array arguments have incompatible or unexpected shapes."""


class ParameterError(AnticipationError):
    """A scalar argument is outside its documented range."""


class RangeError(AnticipationError):
    """A step index or count falls outside the valid window."""


class ContractError(AnticipationError):
    """A call violates an API precondition that is not a shape issue."""


class ConfigError(AnticipationError):
    """A configuration object or file is inconsistent."""


class DataError(AnticipationError):
    """Input data is structurally valid but semantically wrong."""


class ParseError(AnticipationError):
    """A file on disk cannot be decoded into the expected structure."""


class EvaluationError(AnticipationError):
    """A metric was requested on a score table that cannot support it."""
