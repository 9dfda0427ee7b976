"""Exception types shared across the package."""


class KernelEvaluationError(RuntimeError):
    """A covariance evaluation produced a non-finite value."""


class SingularCovarianceError(RuntimeError):
    """Cholesky factorization failed even after jitter escalation."""


class SingularEvaluationError(ArithmeticError):
    """A closed-form density was evaluated at one of its singular points."""
