"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """An argument violates a documented precondition."""


class NumericalFailure(ArithmeticError):
    """A factorization or optimizer step produced unusable numbers."""


class ContractViolation(RuntimeError):
    """An object was used out of its allowed lifecycle (e.g. stepping a finished episode)."""


class UnsupportedOperation(NotImplementedError):
    """The requested operation is not defined for this input."""
