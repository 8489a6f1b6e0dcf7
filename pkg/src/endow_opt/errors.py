"""Exception hierarchy.

Every error carries a stable string ``code`` and maps onto a CLI exit code:
0 success, 1 validation error, 2 check failure, 3 I/O, 4 overflow.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CHECK_FAILED = 2
EXIT_IO = 3
EXIT_OVERFLOW = 4


class EndowOptError(Exception):
    """Base class for all package errors."""

    code = "Error"
    exit_code = EXIT_VALIDATION

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ValidationError(EndowOptError, ValueError):
    """Invalid parameter or configuration value.

    ``field`` names the offending input (a dotted path for config files).
    """

    def __init__(self, message: str, code: str, field: str | None = None):
        super().__init__(message, code)
        self.field = field


class DomainError(EndowOptError, ValueError):
    """Argument outside the domain of a closed-form operation."""


class OverflowGuardError(EndowOptError, ArithmeticError):
    """An exponent exceeded the guard or a result was not finite."""

    code = "Overflow"
    exit_code = EXIT_OVERFLOW


class MemoryBudgetError(EndowOptError, MemoryError):
    """Requested ensemble exceeds the configured memory budget."""

    code = "MemoryBudget"


class StrategyError(EndowOptError, RuntimeError):
    """A strategy failed to evaluate on some path."""

    code = "StrategyFailure"

    def __init__(self, message: str, path_index: int | None = None):
        super().__init__(message)
        self.path_index = path_index


class CheckError(EndowOptError, RuntimeError):
    """A check could not be evaluated (e.g. every path invalid)."""

    code = "CheckUnavailable"
    exit_code = EXIT_CHECK_FAILED
