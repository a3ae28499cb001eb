"""Regularized kernel least squares over a growing observation log.

Three representations of the same posterior live here:

``PosteriorState``
    Immutable, factorizes the full ``t x t`` system ``K_t + lam I``. This is
    the reference object every other path is tested against.
``AggregatedPosterior``
    Immutable, works on sufficient statistics (count, mean) per distinct
    input. Exact whenever inputs repeat, which is the discrete-arm bandit
    case; cost depends on the number of distinct inputs only.
``StreamingFactor`` / ``StreamingStatistics``
    Mutable engines that grow Cholesky factors one row at a time and are
    used by the Monte-Carlo experiment loops.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from . import _backend
from .kernel_core import _as_points, kernel_cross, kernel_matrix
from .linalg import NumericalError, jitter_cholesky

NEGATIVE_VARIANCE_TOL = 1e-10


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _clamp_variance(v, kxx):
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < -NEGATIVE_VARIANCE_TOL):
        raise NumericalError(
            f"posterior variance {float(v.min()):.3e} is below -{NEGATIVE_VARIANCE_TOL}"
        )
    return np.minimum(np.maximum(v, 0.0), kxx)


@dataclass(frozen=True, eq=False)
class ObservationLog:
    """Append-only record of ``(x_t, y_t)`` pairs in acquisition order."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        if self.xs.shape != self.ys.shape:
            raise ValueError("xs and ys must have the same length")

    @classmethod
    def empty(cls):
        return cls(_frozen([]), _frozen([]))

    @classmethod
    def from_arrays(cls, xs, ys):
        return cls(_frozen(np.ravel(xs)), _frozen(np.ravel(ys)))

    def __len__(self):
        return self.xs.shape[0]

    def append(self, x, y):
        return ObservationLog(
            _frozen(np.append(self.xs, float(x))), _frozen(np.append(self.ys, float(y)))
        )


@dataclass(frozen=True)
class InfoGainReport:
    lam: float
    gamma: float
    t: int


@dataclass(frozen=True, eq=False)
class PosteriorState:
    """Factorized ``K_t + lam I_t`` for one regularization value."""

    log: ObservationLog
    lam: float
    kernel: object
    chol: np.ndarray
    weights: np.ndarray
    jitter: float = 0.0

    @property
    def t(self):
        return len(self.log)

    def _solve_cross(self, Kxt):
        return solve_triangular(self.chol, Kxt, lower=True, check_finite=False)

    def mean(self, x):
        if self.t == 0:
            return np.zeros(_as_points(x).shape[0])
        return kernel_cross(self.kernel, x, self.log.xs) @ self.weights

    def variance_kernel(self, x):
        pts = _as_points(x)
        kxx = self.kernel.diag(pts)
        if self.t == 0:
            return kxx
        V = self._solve_cross(kernel_cross(self.kernel, self.log.xs, pts))
        return _clamp_variance(kxx - np.einsum("ij,ij->j", V, V), kxx)

    def covariance_kernel(self, x):
        """Posterior cross-kernel ``k_{lam,t}(x_i, x_j)`` over a point set."""
        pts = _as_points(x)
        K = kernel_matrix(self.kernel, pts)
        if self.t == 0:
            return K
        V = self._solve_cross(kernel_cross(self.kernel, self.log.xs, pts))
        return K - V.T @ V

    def std(self, x, sigma):
        return np.sqrt(sigma**2 / self.lam * self.variance_kernel(x))


def fit(log, lam, kernel):
    """Factorize ``K_t + lam I`` for the whole log."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    t = len(log)
    if t == 0:
        return PosteriorState(log, float(lam), kernel, np.zeros((0, 0)), _frozen([]))
    A = kernel_matrix(kernel, log.xs)
    A[np.diag_indices(t)] += lam
    L, jitter = jitter_cholesky(A)
    w = cho_solve((L, True), log.ys, check_finite=False)
    return PosteriorState(log, float(lam), kernel, _frozen(L), _frozen(w), jitter)


def posterior_mean(state, x):
    out = state.mean(x)
    return float(out[0]) if np.ndim(x) == 0 else out


def posterior_variance_kernel(state, x):
    out = state.variance_kernel(x)
    return float(out[0]) if np.ndim(x) == 0 else out


def posterior_std(state, x, sigma):
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    out = state.std(x, sigma)
    return float(out[0]) if np.ndim(x) == 0 else out


def append_and_refit(state, x, y, lambda_next):
    """Posterior over ``log + (x, y)`` regularized with ``lambda_next``.

    Keeps the old factor and appends one row when the regularization is
    unchanged; any change of ``lambda_next`` refactorizes from scratch.
    """
    if not lambda_next > 0:
        raise ValueError("lambda must be positive")
    log = state.log.append(x, y)
    if lambda_next != state.lam or state.jitter != 0.0:
        return fit(log, lambda_next, state.kernel)
    t = state.t
    L = np.zeros((t + 1, t + 1))
    L[:t, :t] = state.chol
    k = np.empty(t + 1)
    k[:t] = kernel_cross(state.kernel, [x], state.log.xs)[0]
    k[t] = 1.0 + lambda_next
    piv = _backend.chol_append(L, t, k, k[t])
    if not piv > 0:
        return fit(log, lambda_next, state.kernel)
    w = cho_solve((L, True), log.ys, check_finite=False)
    return PosteriorState(log, float(lambda_next), state.kernel, _frozen(L), _frozen(w))


def information_gain(log, lam, kernel):
    """``gamma_t(lam) = 1/2 logdet(I + K_t / lam)``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    t = len(log)
    if t == 0:
        return InfoGainReport(float(lam), 0.0, 0)
    A = kernel_matrix(kernel, log.xs) / lam
    A[np.diag_indices(t)] += 1.0
    L, _ = jitter_cholesky(A)
    return InfoGainReport(float(lam), float(np.log(np.diag(L)).sum()), t)


def information_gain_telescoping(log, lam, kernel):
    """Per-step sum of ``1/2 ln(1 + k_{lam,t-1}(x_t, x_t) / lam)``; O(t^4)."""
    total = 0.0
    state = fit(ObservationLog.empty(), lam, kernel)
    for x, y in zip(log.xs, log.ys):
        total += 0.5 * math.log1p(posterior_variance_kernel(state, x) / lam)
        state = fit(state.log.append(x, y), lam, kernel)
    return total


# ---------------------------------------------------------------------------
# sufficient-statistic form


@dataclass(frozen=True, eq=False)
class AggregatedPosterior:
    """Posterior from per-input counts and means.

    With ``D = diag(sqrt(n))`` over the distinct inputs ``u``, the dual system
    ``K_t + lam I_t`` reduces to ``M = D K_uu D + lam I_r`` and
    ``mean(x) = k(x, u) @ coef`` with ``coef = D M^{-1} D ybar``.
    """

    points: np.ndarray
    counts: np.ndarray
    ybar: np.ndarray
    within_ss: float
    lam: float
    kernel: object
    chol: np.ndarray
    coef: np.ndarray
    gram: np.ndarray
    jitter: float = 0.0

    @property
    def t(self):
        return int(self.counts.sum())

    def mean_from_cross(self, Kux):
        if self.points.size == 0:
            return np.zeros(Kux.shape[1])
        return self.coef @ Kux

    def _whiten(self, Kux):
        D = np.sqrt(self.counts)
        return solve_triangular(self.chol, D[:, None] * Kux, lower=True, check_finite=False)

    def variance_from_cross(self, Kux, kxx):
        if self.points.size == 0:
            return np.asarray(kxx, dtype=np.float64).copy()
        B = self._whiten(Kux)
        return _clamp_variance(kxx - np.einsum("ij,ij->j", B, B), kxx)

    def covariance_from_cross(self, Kux, Kxx):
        if self.points.size == 0:
            return np.array(Kxx, dtype=np.float64)
        B = self._whiten(Kux)
        return Kxx - B.T @ B

    def mean(self, x):
        return self.mean_from_cross(kernel_cross(self.kernel, self.points, x))

    def variance_kernel(self, x):
        pts = _as_points(x)
        return self.variance_from_cross(kernel_cross(self.kernel, self.points, pts), self.kernel.diag(pts))

    def covariance_kernel(self, x):
        pts = _as_points(x)
        return self.covariance_from_cross(kernel_cross(self.kernel, self.points, pts), kernel_matrix(self.kernel, pts))

    def std(self, x, sigma):
        return np.sqrt(sigma**2 / self.lam * self.variance_kernel(x))

    def sigma_hat(self):
        """Root-mean-square residual of the fit over the log it summarizes."""
        t = self.t
        if t == 0:
            raise ValueError("sigma_hat needs at least one observation")
        fitted = self.coef @ self.gram if self.points.size else np.zeros(0)
        ss = self.within_ss + float(self.counts @ (self.ybar - fitted) ** 2)
        return math.sqrt(max(ss, 0.0) / t)


def aggregate_posterior(points, counts, ybar, lam, kernel, within_ss=0.0, gram=None):
    """Build an ``AggregatedPosterior``; ``gram`` may pass a precomputed ``K_uu``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    pts = _as_points(points) if np.size(points) else np.zeros(0)
    n = np.asarray(counts, dtype=np.float64).ravel()
    yb = np.asarray(ybar, dtype=np.float64).ravel()
    if pts.size == 0:
        empty = np.zeros((0, 0))
        return AggregatedPosterior(pts, n, yb, 0.0, float(lam), kernel, empty, np.zeros(0), empty)
    K = kernel_matrix(kernel, pts) if gram is None else gram
    D = np.sqrt(n)
    M = D[:, None] * K * D[None, :]
    M[np.diag_indices(pts.size)] += lam
    L, jitter = jitter_cholesky(M)
    coef = D * cho_solve((L, True), D * yb, check_finite=False)
    return AggregatedPosterior(pts, n, yb, float(within_ss), float(lam), kernel, L, coef, K, jitter)


def aggregated_information_gain(gram, counts, lam):
    """``1/2 logdet(I + D K D / lam)``, equal to the dual-form information gain."""
    n = np.asarray(counts, dtype=np.float64)
    if n.size == 0:
        return 0.0
    D = np.sqrt(n)
    A = D[:, None] * gram * D[None, :] / lam
    A[np.diag_indices(n.size)] += 1.0
    L, _ = jitter_cholesky(A)
    return float(np.log(np.diag(L)).sum())


def log_to_aggregate(log):
    """Distinct inputs, counts, means and within-group sum of squares of a log."""
    u, inv, counts = np.unique(log.xs, return_inverse=True, return_counts=True)
    sums = np.bincount(inv, weights=log.ys, minlength=u.size)
    ybar = sums / counts
    within = float(((log.ys - ybar[inv]) ** 2).sum())
    return u, counts.astype(np.float64), ybar, within


# ---------------------------------------------------------------------------
# incremental engines


class StreamingFactor:
    """Grow the factor of ``K_t + lam I`` for a fixed ``lam``, one row per step.

    Optionally tracks posterior mean and variance on a fixed probe grid in
    O(t * n_probes) per step, and the information gain ``gamma_t(lam)``.
    """

    def __init__(self, kernel, lam, probes=None, capacity=64):
        if not lam > 0:
            raise ValueError("lambda must be positive")
        self.kernel = kernel
        self.lam = float(lam)
        self.t = 0
        self.gamma = 0.0
        self._cap = capacity
        self._L = np.zeros((capacity, capacity))
        self._xs = np.zeros(capacity)
        self._ys = np.zeros(capacity)
        self._z = np.zeros(capacity)
        self.probes = None if probes is None else _as_points(probes)
        if self.probes is not None:
            P = self.probes.size
            self._V = np.zeros((capacity, P))
            self._mean = np.zeros(P)
            self._var = kernel.diag(self.probes).astype(np.float64)

    def _grow(self):
        cap = 2 * self._cap
        L = np.zeros((cap, cap))
        L[: self._cap, : self._cap] = self._L
        self._L = L
        for name in ("_xs", "_ys", "_z"):
            old = getattr(self, name)
            new = np.zeros(cap)
            new[: self._cap] = old
            setattr(self, name, new)
        if self.probes is not None:
            V = np.zeros((cap, self._V.shape[1]))
            V[: self._cap] = self._V
            self._V = V
        self._cap = cap

    def append(self, x, y):
        """Add one observation; returns the prior ``k_{lam,t-1}(x, x)``."""
        n = self.t
        if n == self._cap:
            self._grow()
        x = float(x)
        k = np.zeros(n + 1)
        if n:
            k[:n] = kernel_cross(self.kernel, [x], self._xs[:n])[0]
        diag = 1.0 + self.lam
        piv = _backend.chol_append(self._L, n, k, diag)
        if not piv > 0:
            raise NumericalError("non-positive pivot in incremental Cholesky", step=n + 1)
        L = self._L
        znew = (y - L[n, :n] @ self._z[:n]) / L[n, n]
        self._z[n] = znew
        self._xs[n] = x
        self._ys[n] = y
        if self.probes is not None:
            kp = kernel_cross(self.kernel, [x], self.probes)[0]
            row = _backend.probe_append(L, n, self._V, kp)
            self._mean += row * znew
            self._var -= row * row
        self.t = n + 1
        self.gamma += 0.5 * math.log(piv / self.lam)
        return piv - self.lam

    @property
    def chol(self):
        return self._L[: self.t, : self.t]

    @property
    def xs(self):
        return self._xs[: self.t]

    @property
    def ys(self):
        return self._ys[: self.t]

    def weights(self):
        return cho_solve((self.chol, True), self.ys, check_finite=False) if self.t else np.zeros(0)

    def probe_mean(self):
        return self._mean.copy()

    def probe_variance(self):
        return _clamp_variance(self._var, self.kernel.diag(self.probes))

    def state(self):
        """Snapshot as an immutable ``PosteriorState``."""
        log = ObservationLog.from_arrays(self.xs, self.ys)
        if self.t == 0:
            return fit(log, self.lam, self.kernel)
        return PosteriorState(log, self.lam, self.kernel, _frozen(self.chol), _frozen(self.weights()))


class StreamingStatistics:
    """Growing log with cached factors for several regularization values.

    Serves ``sigma_hat``, ``max_gain_term`` and ``information_gain`` for any
    ``lam``; a factor requested again at the next step is extended by one
    row instead of being recomputed. This is the statistics provider the
    noise-bracketing code consumes for continuous inputs.
    """

    max_cached = 4

    def __init__(self, kernel, probes=None, capacity=64):
        self.kernel = kernel
        self.t = 0
        self._cap = capacity
        self._G = np.zeros((capacity, capacity))
        self._xs = np.zeros(capacity)
        self._ys = np.zeros(capacity)
        self._factors = {}
        self.probes = None if probes is None else _as_points(probes)
        if self.probes is not None:
            self._Kp = np.zeros((capacity, self.probes.size))

    @classmethod
    def from_log(cls, log, kernel, probes=None):
        stats = cls(kernel, probes=probes, capacity=max(64, len(log)))
        for x, y in zip(log.xs, log.ys):
            stats.append(x, y)
        return stats

    def _grow(self):
        cap = 2 * self._cap
        G = np.zeros((cap, cap))
        G[: self._cap, : self._cap] = self._G
        self._G = G
        for name in ("_xs", "_ys"):
            new = np.zeros(cap)
            new[: self._cap] = getattr(self, name)
            setattr(self, name, new)
        if self.probes is not None:
            Kp = np.zeros((cap, self.probes.size))
            Kp[: self._cap] = self._Kp
            self._Kp = Kp
        for key, (L, n, jit) in list(self._factors.items()):
            L2 = np.zeros((cap, cap))
            L2[:n, :n] = L[:n, :n]
            self._factors[key] = (L2, n, jit)
        self._cap = cap

    def append(self, x, y):
        n = self.t
        if n == self._cap:
            self._grow()
        x = float(x)
        if n:
            row = kernel_cross(self.kernel, [x], self._xs[:n])[0]
            self._G[n, :n] = row
            self._G[:n, n] = row
        self._G[n, n] = 1.0
        self._xs[n] = x
        self._ys[n] = y
        if self.probes is not None:
            self._Kp[n] = kernel_cross(self.kernel, [x], self.probes)[0]
        self.t = n + 1

    @property
    def xs(self):
        return self._xs[: self.t]

    @property
    def ys(self):
        return self._ys[: self.t]

    def log(self):
        return ObservationLog.from_arrays(self.xs, self.ys)

    def factor(self, lam):
        """Lower factor of ``K_t + (lam + jitter) I`` and the jitter used."""
        lam = float(lam)
        t = self.t
        entry = self._factors.pop(lam, None)
        if entry is not None:
            L, n, jit = entry
            while n < t and jit == 0.0:
                k = self._G[n, : n + 1].copy()
                piv = _backend.chol_append(L, n, k, 1.0 + lam)
                if not piv > 0:
                    entry = None
                    break
                n += 1
        if entry is None:
            L = np.zeros((self._cap, self._cap))
            A = self._G[:t, :t].copy()
            A[np.diag_indices(t)] += lam
            L[:t, :t], jit = jitter_cholesky(A)
            n = t
        elif n < t:
            # jittered factors are not extended incrementally
            A = self._G[:t, :t].copy()
            A[np.diag_indices(t)] += lam
            L[:t, :t], jit = jitter_cholesky(A)
            n = t
        self._factors[lam] = (L, n, jit)
        while len(self._factors) > self.max_cached:
            self._factors.pop(next(iter(self._factors)))
        return L[:t, :t], jit

    def sigma_hat(self, lam):
        if self.t == 0:
            raise ValueError("sigma_hat needs at least one observation")
        L, jit = self.factor(lam)
        w = cho_solve((L, True), self.ys, check_finite=False)
        # y - K w = (lam + jitter) w for the regularized solution
        return (lam + jit) * float(np.linalg.norm(w)) / math.sqrt(self.t)

    def max_gain_term(self, lam):
        """``max_{t'} (1 + k_{lam,t'-1}(x_t', x_t') / lam)``."""
        if self.t == 0:
            return 1.0
        # k_{lam,t'-1}(x, x) <= k(x, x) and the kernel diagonal is constant,
        # so the first step attains the max
        return 1.0 + float(self.kernel.diag(self._xs[:1])[0]) / lam

    def information_gain(self, lam):
        if self.t == 0:
            return 0.0
        L, jit = self.factor(lam)
        return float(np.log(np.diag(L)).sum() - 0.5 * self.t * math.log(lam + jit))

    def predict(self, lam):
        """Posterior mean and variance kernel on the probe grid."""
        P = self.probes.size
        if self.t == 0:
            return np.zeros(P), self.kernel.diag(self.probes)
        L, _ = self.factor(lam)
        V = solve_triangular(L, self._Kp[: self.t], lower=True, check_finite=False)
        z = solve_triangular(L, self.ys, lower=True, check_finite=False)
        kxx = self.kernel.diag(self.probes)
        return V.T @ z, _clamp_variance(kxx - np.einsum("ij,ij->j", V, V), kxx)
