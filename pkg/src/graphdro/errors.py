"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Malformed configuration or input file (CLI exit code 2)."""


class NumericalError(ArithmeticError):
    """Non-finite values encountered during optimization (CLI exit code 3)."""
