"""Exception hierarchy and process exit codes."""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class NeuralCMFError(Exception):
    """Base class for errors raised by this package."""


class DataError(NeuralCMFError):
    """Missing, malformed, or inconsistent input data."""


class NumericalError(NeuralCMFError):
    """A computation produced non-finite or otherwise invalid values."""


class UsageError(NeuralCMFError):
    """Bad command-line arguments."""
