"""Exception hierarchy shared across the package.

Data errors (bad inputs, bad files) map to CLI exit code 2; verification
failures map to exit code 3.
"""


class GridSynthError(Exception):
    """Base class for all package errors."""


class DataError(GridSynthError):
    """Invalid input data or file contents (CLI exit code 2)."""


class EmptyPoolError(DataError):
    """No object patches available (empty pool or nothing survived filtering)."""


class DimensionMismatchError(DataError):
    """Operands do not share the required dimensions."""


class ZeroNormRowError(DataError):
    """An embedding row has zero norm and cannot be normalized."""


class KTooLargeError(DataError):
    """Requested more selections than candidates exist."""


class BudgetExceedsRowsError(DataError):
    """Supplement budget exceeds the number of eligible encoder rows."""


class ParseError(DataError):
    """Malformed file; message carries line/field context."""


class DanglingReferenceError(DataError):
    """An id reference does not resolve to a declared entry."""


class DecodeError(DataError):
    """Image file could not be decoded."""


class BadMagicError(DataError):
    """Embedding file does not start with the expected magic bytes."""


class TruncatedPayloadError(DataError):
    """Embedding file payload is shorter than the header declares."""


class VerificationError(GridSynthError):
    """A self-check (tolerance sweep, digest comparison) failed (exit code 3)."""
