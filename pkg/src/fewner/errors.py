"""Exception types shared across the toolkit."""


class DataError(Exception):
    """Malformed or insufficient input data (parse failures, missing types, ...)."""


class NumericError(Exception):
    """Numerical failure during training (non-finite gradients and the like)."""
