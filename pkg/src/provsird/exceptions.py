"""Error types raised across the package.

Every error derives from :class:`ProvsirdError` so callers can catch the whole
family at once; the subclasses map onto the failure categories the CLI turns
into exit codes.
"""


class ProvsirdError(Exception):
    """Base class for all package errors."""


class InvalidInput(ProvsirdError, ValueError):
    """Arguments violate an operation's preconditions."""


class StructuralError(ProvsirdError, ValueError):
    """A series is malformed (misaligned lengths), not merely anomalous."""


class SchemaError(ProvsirdError, ValueError):
    """A CSV file lacks a mandatory column."""

    def __init__(self, column, path=None):
        self.column = column
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"missing mandatory column {column!r}{where}")


class RowError(ProvsirdError, ValueError):
    """A CSV data row could not be parsed."""

    def __init__(self, row_index, message, path=None):
        self.row_index = row_index
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}row {row_index}: {message}")


class AlignmentError(ProvsirdError, ValueError):
    """Series that must share dates or horizons do not."""


class ConsistencyError(ProvsirdError, ValueError):
    """Assembled compartments are inconsistent, e.g. negative infected."""

    def __init__(self, message, unit_id=None, date=None):
        self.unit_id = unit_id
        self.date = date
        super().__init__(message)


class InsufficientData(ProvsirdError, ValueError):
    """Not enough usable observations for the requested computation."""

    def __init__(self, message, required=None, available=None):
        self.required = required
        self.available = available
        super().__init__(message)


class UndefinedCorrelation(ProvsirdError, ValueError):
    """Weighted correlation with a zero-variance argument."""


class UndefinedMetric(ProvsirdError, ValueError):
    """An error metric has no eligible rows."""


class InsufficientVariation(ProvsirdError, ValueError):
    """Higher moments requested for a constant sample."""
