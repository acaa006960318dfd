"""
Error categories for strata-eit.

Every concrete error raised by the numerical core derives from exactly one of
the category bases below. The CLI maps categories onto exit statuses:

    StrataConfigError      -> 2 (config could not be parsed)
    StrataValidationError  -> 3 (inputs violate a geometric or physical assumption)
    StrataSolverError      -> 4 (forward / N-D machinery failed)
    StrataInversionError   -> 5 (identification failed)

Concrete subclasses live next to the code that raises them.
"""


class StrataError(Exception):
    """Base class for all strata-eit errors."""

    exit_code: int = 1


class StrataConfigError(StrataError):
    """Raised when an experiment config cannot be read or parsed."""

    exit_code = 2


class StrataValidationError(StrataError):
    """Raised when a region, tensor or diffeo violates its invariants."""

    exit_code = 3


class StrataSolverError(StrataError):
    """Raised when assembly, a linear solve or an N-D build fails."""

    exit_code = 4


class StrataInversionError(StrataError):
    """Raised when tensor recovery or layer stripping fails."""

    exit_code = 5
