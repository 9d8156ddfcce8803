"""Exception types shared across the toolkit.

Each maps to a CLI exit code: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataError(ValueError):
    """Dataset is missing, malformed, or violates an invariant."""


class NumericalError(ArithmeticError):
    """Non-finite values, divergence, or a numeric domain violation."""


class ShapeError(ValueError):
    """Tensor operands have incompatible shapes."""
