"""Exception hierarchy shared by every stage.

Each class carries the process exit code the CLI maps it to:
2 = configuration, 3 = data, 4 = numeric/degeneracy.
"""


class ToolkitError(Exception):
    exit_code = 1


class ConfigError(ToolkitError):
    """Invalid configuration: bad key, bad type, conflicting sources."""

    exit_code = 2


class DataError(ToolkitError):
    exit_code = 3


class SchemaError(DataError):
    """CSV header does not match the documented column layout."""


class ParseError(DataError):
    """A data cell could not be parsed; message cites the row."""


class InsufficientDataError(DataError):
    """Operation needs more samples than were provided."""


class StratificationError(DataError):
    """A class is too small to split or fold as requested."""


class MissingLabelsError(DataError):
    """Labels required but absent."""


class NumericError(ToolkitError):
    exit_code = 4


class ShapeError(NumericError):
    """Dimension or shape mismatch."""


class DomainError(NumericError):
    """Argument outside its mathematical domain."""


class NotPositiveDefiniteError(NumericError):
    """Factorization failed even at the jitter cap."""


class DegenerateResidualsError(NumericError):
    """Reconstruction residuals have no usable covariance."""


class DegenerateLabelsError(NumericError):
    """Training data contains a single class."""


class UndefinedAurocError(NumericError):
    """AUROC requested with only one class present."""
