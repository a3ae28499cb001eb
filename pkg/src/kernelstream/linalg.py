"""Jittered Cholesky factorization and Gaussian sampling."""
import numpy as np
import scipy.linalg as la

JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)


class NumericalError(ArithmeticError):
    """A factorization failed even after jitter escalation."""

    def __init__(self, message, condition=None, step=None):
        super().__init__(message)
        self.condition = condition
        self.step = step

    def __str__(self):
        msg = super().__str__()
        if self.condition is not None:
            msg += f" (condition estimate {self.condition:.3e})"
        if self.step is not None:
            msg += f" at step {self.step}"
        return msg


def jitter_cholesky(A, ladder=JITTER_LADDER):
    """Lower Cholesky factor of ``A``, adding diagonal jitter on failure.

    Returns
    -------
    L : ndarray
        Lower-triangular factor of ``A + jitter * I``.
    jitter : float
        The jitter that made the factorization succeed.

    Raises
    ------
    NumericalError
        If every rung of ``ladder`` fails. Carries a condition estimate.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    for jitter in ladder:
        M = A if jitter == 0.0 else A + jitter * np.eye(n)
        try:
            return la.cholesky(M, lower=True, check_finite=False), jitter
        except la.LinAlgError:
            continue
    try:
        cond = float(np.linalg.cond(A))
    except np.linalg.LinAlgError:
        cond = float("inf")
    raise NumericalError("Cholesky failed after jitter escalation", condition=cond)


def sample_mvn(mean, cov, rng, size=None):
    """Draw from N(mean, cov) as ``mean + L z`` with a jittered Cholesky factor."""
    L, _ = jitter_cholesky(cov)
    n = len(mean)
    if size is None:
        return mean + L @ rng.standard_normal(n)
    return mean + rng.standard_normal((size, n)) @ L.T
