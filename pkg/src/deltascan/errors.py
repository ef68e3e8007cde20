"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """Raised when an argument breaks a documented precondition (shape, range)."""


class NumericError(ArithmeticError):
    """Raised when inputs or intermediates contain NaN or infinity."""


def require(cond: bool, msg: str) -> None:
    if not cond:
        raise ContractViolation(msg)


def require_finite(name: str, *arrays) -> None:
    import numpy as np

    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"{name}: non-finite values")
