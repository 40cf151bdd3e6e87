"""Exception hierarchy. The CLI maps each family onto a distinct exit code."""


class AAFMError(Exception):
    exit_code = 1


class ConfigError(AAFMError):
    exit_code = 2


class SchemaError(AAFMError):
    """Input tables do not match the configured column layout."""

    exit_code = 3


class DataError(AAFMError):
    """Row-level ingestion failures above the tolerated fraction, or empty input."""

    exit_code = 3

    def __init__(self, message, row_errors=()):
        super().__init__(message)
        self.row_errors = list(row_errors)


class NumericalError(AAFMError):
    exit_code = 4

    def __init__(self, message, domain=None, epoch=None, batch=None):
        super().__init__(message)
        self.domain = domain
        self.epoch = epoch
        self.batch = batch


class UndefinedMetricError(AAFMError, ValueError):
    """A ranking metric was requested over single-class input."""
