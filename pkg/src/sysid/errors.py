"""Exception types shared across the package.

Each class carries the CLI exit code it maps to.
"""


class SysIdError(Exception):
    exit_code = 1


class ConfigError(SysIdError, ValueError):
    exit_code = 1


class DomainError(SysIdError, ValueError):
    """An input falls outside the region where the vehicle model is defined."""

    exit_code = 2

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DataError(SysIdError, ValueError):
    exit_code = 2


class NumericalError(SysIdError, ArithmeticError):
    exit_code = 3


class DivergenceError(NumericalError):
    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message if step is None else f"{message} (step {step})")


class FitError(NumericalError):
    def __init__(self, message, residuals=None):
        self.residuals = residuals
        super().__init__(message)
