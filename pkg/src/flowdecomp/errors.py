"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition or file contract."""


class DivergenceError(RuntimeError):
    """Raised when an optimization run diverges or produces non-finite values."""
