"""Exception types shared across the package (the CLI maps them to exit codes)."""


class ConfigError(ValueError):
    """Invalid configuration or argument value."""


class DataError(RuntimeError):
    """Missing or malformed input data."""


class NumericalError(ArithmeticError):
    """Training produced a non-finite value."""


class UndefinedValueError(ValueError):
    """A statistic is undefined for the given input (e.g. width of an empty skeleton)."""
