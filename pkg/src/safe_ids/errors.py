"""Exception hierarchy shared by all stages.

The CLI maps each family to a process exit code.
"""


class SafeError(Exception):
    """Base class for all package errors."""

    exit_code = 1

    def __init__(self, message: str, stage: str | None = None) -> None:
        super().__init__(message)
        self.stage = stage

    def __str__(self) -> str:
        msg = super().__str__()
        return f"[{self.stage}] {msg}" if self.stage else msg


class ConfigError(SafeError, ValueError):
    exit_code = 2


class DataError(SafeError, ValueError):
    exit_code = 3


class NumericalError(SafeError, ArithmeticError):
    exit_code = 4


class LeakageError(SafeError, RuntimeError):
    """A fit step received rows outside the normal training partition."""

    exit_code = 3
