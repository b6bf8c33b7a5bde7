"""Exception types shared across the package."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class NumericalError(ArithmeticError):
    """A numerical routine could not produce a valid result."""
