"""Exception types shared across the package."""


class ContractViolationError(ValueError):
    """An operation was invoked with arguments violating its contract."""


class ConfigurationError(ValueError):
    """Invalid or inconsistent run configuration."""


class NotHPDError(Exception):
    """Cholesky factorization failed: the matrix is not Hermitian positive definite.

    ``pivot`` is the 0-based index of the first non-positive pivot.
    """

    def __init__(self, pivot: int):
        super().__init__(f"matrix is not HPD (first bad pivot at index {pivot})")
        self.pivot = pivot


class InternalError(RuntimeError):
    """An internal invariant was violated; indicates a bug, not bad input."""
