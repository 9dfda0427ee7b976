"""Dense Cholesky helpers with the jitter-escalation rescue policy."""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .exceptions import SingularCovarianceError

# Jitter ladder: start at 1e-10 * mean(diag), escalate x10 up to 1e-4 * mean(diag).
JITTER_START = 1e-10
JITTER_MAX = 1e-4


def chol_with_jitter(mat):
    """Lower Cholesky factor of a PSD matrix, rescuing with escalating jitter.

    Returns (L, jitter_used).  Raises SingularCovarianceError listing the
    attempted jitters when even the largest jitter fails.
    """
    n = mat.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    mean_diag = float(np.trace(mat)) / n
    if mean_diag <= 0.0:
        mean_diag = 1.0
    attempted = []
    jitter = 0.0
    while True:
        try:
            shifted = mat if jitter == 0.0 else mat + jitter * np.eye(n)
            return cholesky(shifted, lower=True), jitter
        except np.linalg.LinAlgError:
            pass
        attempted.append(jitter)
        if jitter == 0.0:
            jitter = JITTER_START * mean_diag
        else:
            jitter *= 10.0
        if jitter > JITTER_MAX * mean_diag * (1.0 + 1e-12):
            raise SingularCovarianceError(
                f"Cholesky failed after jitters {attempted}")


def chol_solve_vec(chol_lower, rhs):
    """Solve (L L^T) x = rhs given the lower factor."""
    if chol_lower.shape[0] == 0:
        return np.zeros_like(rhs)
    return cho_solve((chol_lower, True), rhs)


def half_solve(chol_lower, rhs):
    """Solve L v = rhs (so that rhs^T (L L^T)^{-1} rhs = |v|^2)."""
    if chol_lower.shape[0] == 0:
        return np.zeros_like(rhs)
    return solve_triangular(chol_lower, rhs, lower=True)


def logdet_from_chol(chol_lower):
    if chol_lower.shape[0] == 0:
        return 0.0
    return 2.0 * float(np.sum(np.log(np.diag(chol_lower))))
