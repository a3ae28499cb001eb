"""Kernel UCB and Kernel Thompson sampling on a discrete arm grid.

Posteriors are built from per-arm sufficient statistics
(``AggregatedPosterior``), which is exact for repeated arms and keeps each
step at O(n_arms^3) whatever the horizon.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .confidence_bounds import (
    ConfidenceParams,
    beta_bernstein,
    beta_fixed,
    wang_bound,
)
from .kernel_core import kernel_matrix
from .linalg import NumericalError, jitter_cholesky
from .streaming_regression import aggregate_posterior, aggregated_information_gain
from .variance_estimation import NoiseBracket, update_bracket

POLICIES = ("ucb", "ts")
REG_MODES = ("oracle", "fixed", "adaptive")
INFLATIONS = ("theory", "wang", "none")


@dataclass(frozen=True, eq=False)
class BanditEnvironment:
    arms: np.ndarray
    truth: object
    noise_sigma: float
    rng_seed: int
    means: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        arms = np.asarray(self.arms, dtype=np.float64).ravel()
        if arms.size == 0:
            raise ValueError("need at least one arm")
        if np.unique(arms).size != arms.size:
            raise ValueError("arms must be distinct")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        arms.setflags(write=False)
        means = np.asarray(self.truth(arms), dtype=np.float64)
        means.setflags(write=False)
        object.__setattr__(self, "arms", arms)
        object.__setattr__(self, "means", means)

    @property
    def best_value(self):
        return float(self.means.max())

    @property
    def max_gap(self):
        return float(self.means.max() - self.means.min())

    def with_seed(self, seed):
        return BanditEnvironment(self.arms, self.truth, self.noise_sigma, int(seed))


def grid_environment(truth, n_arms=100, noise_sigma=0.1, seed=0):
    """Environment on ``n_arms`` evenly spaced points of [0, 1]."""
    return BanditEnvironment(np.linspace(0.0, 1.0, n_arms), truth, noise_sigma, int(seed))


@dataclass(frozen=True)
class AgentConfig:
    """How an agent picks arms and sets its regularization.

    ``oracle`` uses the true noise level (``sigma_true``) and
    ``lam = sigma_true**2 / C**2``; ``fixed`` uses ``sigma_plus_prior`` and
    ``lam = sigma_plus_prior**2 / C**2``; ``adaptive`` runs the noise bracket.
    ``inflation`` only matters for TS: ``theory`` uses ``v_t = beta / sigma_plus``,
    ``none`` uses ``v_t = 1`` and ``wang`` uses the per-time baseline radius
    at ``lam = sigma_true**2`` (oracle mode only).
    """

    policy: str
    reg_mode: str
    params: ConfidenceParams
    sigma_plus_prior: float = 1.0
    sigma_minus_prior: float = 0.01
    horizon: int = 1000
    sigma_true: float | None = None
    inflation: str = "theory"

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.reg_mode not in REG_MODES:
            raise ValueError(f"unknown reg_mode {self.reg_mode!r}")
        if self.inflation not in INFLATIONS:
            raise ValueError(f"unknown inflation {self.inflation!r}")
        if self.reg_mode == "oracle" and not (self.sigma_true and self.sigma_true > 0):
            raise ValueError("oracle mode needs a positive sigma_true")
        if self.inflation == "wang" and (self.policy != "ts" or self.reg_mode != "oracle"):
            raise ValueError("wang inflation is defined for oracle Kernel TS only")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")

    @property
    def label(self):
        suffix = "" if self.inflation == "theory" else f"-{self.inflation}"
        return f"{self.policy}{suffix}/{self.reg_mode}"


class ArmStatistics:
    """Per-arm counts and Welford moments over a fixed arm grid.

    Implements the statistics-provider protocol of ``variance_estimation``.
    Results for a given ``lam`` are cached until the next ``add``.
    """

    def __init__(self, arms, kernel, gram=None):
        self.arms = np.asarray(arms, dtype=np.float64)
        self.kernel = kernel
        self.gram = kernel_matrix(kernel, self.arms) if gram is None else gram
        m = self.arms.size
        self.counts = np.zeros(m)
        self.ybar = np.zeros(m)
        self.m2 = np.zeros(m)
        self.t = 0
        self.first_arm = None
        self._cache = {}

    def add(self, idx, y):
        if self.first_arm is None:
            self.first_arm = idx
        n = self.counts[idx] + 1.0
        d = y - self.ybar[idx]
        self.ybar[idx] += d / n
        self.m2[idx] += d * (y - self.ybar[idx])
        self.counts[idx] = n
        self.t += 1
        self._cache = {}

    @property
    def visited(self):
        return np.flatnonzero(self.counts)

    def posterior(self, lam):
        key = ("post", lam)
        if key not in self._cache:
            v = self.visited
            self._cache[key] = aggregate_posterior(
                self.arms[v],
                self.counts[v],
                self.ybar[v],
                lam,
                self.kernel,
                within_ss=float(self.m2[v].sum()),
                gram=self.gram[np.ix_(v, v)],
            )
        return self._cache[key]

    def sigma_hat(self, lam):
        return self.posterior(lam).sigma_hat()

    def max_gain_term(self, lam):
        # constant unit diagonal: the first observation has the largest prior variance
        if self.t == 0:
            return 1.0
        return 1.0 + self.gram[self.first_arm, self.first_arm] / lam

    def information_gain(self, lam):
        key = ("gain", lam)
        if key not in self._cache:
            v = self.visited
            self._cache[key] = aggregated_information_gain(
                self.gram[np.ix_(v, v)], self.counts[v], lam
            )
        return self._cache[key]

    def arm_moments(self, lam, covariance=False):
        """Posterior mean, variance kernel and optionally the full cross-kernel on all arms."""
        post = self.posterior(lam)
        Kux = self.gram[self.visited]
        mean = post.mean_from_cross(Kux)
        var = post.variance_from_cross(Kux, np.diag(self.gram))
        cov = post.covariance_from_cross(Kux, self.gram) if covariance else None
        return mean, var, cov


def _ucb_index(mean, var, lam, beta):
    return int(np.argmax(mean + np.sqrt(var / lam) * beta))


def ts_sample(mean, cov_kernel, scale, rng, size=None):
    """Joint draws from ``N(mean, scale * cov_kernel)``.

    The unit-scale kernel matrix is factored, so the jitter ladder is
    relative to ``k(x, x)`` rather than to ``scale``.
    """
    L, _ = jitter_cholesky(cov_kernel)
    root = math.sqrt(scale)
    if size is None:
        return mean + root * (L @ rng.standard_normal(mean.size))
    return mean + root * (rng.standard_normal((size, mean.size)) @ L.T)


def _ts_index(mean, cov, scale, rng):
    if scale == 0.0:
        return int(np.argmax(mean))
    return int(np.argmax(ts_sample(mean, cov, scale, rng)))


def ucb_select(state, beta, arms):
    """Arm maximizing ``mean + sqrt(k_{lam,t}(x, x) / lam) * beta``; ties go to the lowest index."""
    return _ucb_index(state.mean(arms), state.variance_kernel(arms), state.lam, beta)


def ts_select(state, sigma_plus, v_t, arms, rng):
    """Argmax of one joint draw from ``N(mean, v_t^2 (sigma_plus^2 / lam) k_{lam,t})`` on ``arms``."""
    scale = v_t**2 * sigma_plus**2 / state.lam
    return _ts_index(state.mean(arms), state.covariance_kernel(arms), scale, rng)


@dataclass(eq=False)
class RegretTrace:
    """Per-step record of one bandit run (arrays indexed by step, step t at index t-1)."""

    label: str
    arm_index: np.ndarray
    reward: np.ndarray
    instantaneous_regret: np.ndarray
    cumulative_regret: np.ndarray
    lambda_t: np.ndarray
    sigma_plus_t: np.ndarray
    sigma_minus_t: np.ndarray
    beta_t: np.ndarray
    gamma_t: np.ndarray
    prior_var_kernel: np.ndarray
    envelope_ok: np.ndarray
    optimistic: np.ndarray

    @property
    def t(self):
        return np.arange(1, self.arm_index.size + 1)

    @property
    def summary(self):
        T = self.arm_index.size
        return {
            "label": self.label,
            "horizon": T,
            "cumulative_regret": float(self.cumulative_regret[-1]) if T else 0.0,
            "envelope_failures": int(T - self.envelope_ok.sum()),
            "final_lambda": float(self.lambda_t[-1]) if T else math.nan,
            "final_sigma_plus": float(self.sigma_plus_t[-1]) if T else math.nan,
        }


def run_bandit(env, config):
    """Play ``config.horizon`` rounds; deterministic given ``env.rng_seed``."""
    C = config.params.norm_bound_C
    delta = config.params.delta
    T = config.horizon
    stats = ArmStatistics(env.arms, env.truth.kernel)
    noise_rng, policy_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(env.rng_seed).spawn(2))
    best = env.best_value

    bracket = None
    if config.reg_mode == "oracle":
        sigma_plus = config.sigma_true
        sigma_minus = config.sigma_true
        lam = config.sigma_true**2 if config.inflation == "wang" else config.sigma_true**2 / C**2
    elif config.reg_mode == "fixed":
        sigma_plus = config.sigma_plus_prior
        sigma_minus = config.sigma_minus_prior
        lam = sigma_plus**2 / C**2
    else:
        bracket = NoiseBracket.initial(config.sigma_plus_prior, config.sigma_minus_prior, C)

    cols = {name: np.zeros(T) for name in (
        "reward", "inst", "lam", "sp", "sm", "beta", "gamma", "pvar")}
    arm_index = np.zeros(T, dtype=np.int64)
    env_ok = np.ones(T, dtype=bool)
    optimistic = np.ones(T, dtype=bool)
    want_cov = config.policy == "ts"

    for step in range(T):
        if bracket is not None:
            sigma_plus, sigma_minus, lam = bracket.sigma_plus, bracket.sigma_minus, bracket.lambda_t
            gamma = stats.information_gain(bracket.anchor_lambda)
        else:
            gamma = stats.information_gain(lam)
        try:
            mean, var, cov = stats.arm_moments(lam, covariance=want_cov)
        except NumericalError as err:
            err.step = step + 1
            raise

        if config.inflation == "wang":
            radius = wang_bound(C, config.sigma_true, gamma, delta)
            hw = radius * np.sqrt(var)
            beta = radius * math.sqrt(lam)  # same half-width in sqrt(k / lam) units
        else:
            if config.reg_mode == "oracle":
                beta = beta_fixed(C, config.sigma_true, lam, gamma, delta)
            else:
                beta = beta_bernstein(config.params, sigma_plus, lam, gamma)
            hw = np.sqrt(var / lam) * beta

        if config.policy == "ucb":
            idx = int(np.argmax(mean + hw))
        else:
            if config.inflation == "theory":
                v = beta / sigma_plus
            elif config.inflation == "none":
                v = 1.0
            else:
                v = radius
            try:
                idx = _ts_index(mean, cov, v**2 * sigma_plus**2 / lam, policy_rng)
            except NumericalError as err:
                err.step = step + 1
                raise

        y = env.means[idx] + env.noise_sigma * noise_rng.standard_normal()
        arm_index[step] = idx
        cols["reward"][step] = y
        cols["inst"][step] = best - env.means[idx]
        cols["lam"][step] = lam
        cols["sp"][step] = sigma_plus
        cols["sm"][step] = sigma_minus
        cols["beta"][step] = beta
        cols["gamma"][step] = gamma
        cols["pvar"][step] = var[idx]
        env_ok[step] = bool(np.all(np.abs(env.means - mean) <= hw))
        optimistic[step] = mean[idx] + hw[idx] >= best

        stats.add(idx, y)
        if bracket is not None:
            bracket = update_bracket(bracket, stats, config.params, delta)

    return RegretTrace(
        label=config.label,
        arm_index=arm_index,
        reward=cols["reward"],
        instantaneous_regret=cols["inst"],
        cumulative_regret=np.cumsum(cols["inst"]),
        lambda_t=cols["lam"],
        sigma_plus_t=cols["sp"],
        sigma_minus_t=cols["sm"],
        beta_t=cols["beta"],
        gamma_t=cols["gamma"],
        prior_var_kernel=cols["pvar"],
        envelope_ok=env_ok,
        optimistic=optimistic,
    )


def cumulative_regret(trace):
    return float(trace.cumulative_regret[-1]) if trace.arm_index.size else 0.0


def regret_of_arms(env, arm_indices):
    """Cumulative regret curve of a fixed arm sequence."""
    idx = np.asarray(arm_indices, dtype=np.int64)
    return np.cumsum(env.best_value - env.means[idx])


def information_gain_curve(env, arm_indices, lam):
    """``gamma_t(lam)`` along a played arm sequence, for t = 1..T."""
    gram = kernel_matrix(env.truth.kernel, env.arms)
    counts = np.zeros(env.arms.size)
    out = np.zeros(len(arm_indices))
    for i, a in enumerate(arm_indices):
        counts[a] += 1
        v = np.flatnonzero(counts)
        out[i] = aggregated_information_gain(gram[np.ix_(v, v)], counts[v], lam)
    return out


def ts_constant_c2(delta):
    return math.sqrt(8.0 * math.pi * math.e * (1.0 + delta * math.sqrt(4.0 * math.pi * math.e)) ** 2)


def ts_constant_c1(T, n_arms, delta):
    return (4.0 * math.sqrt(math.pi * math.e) + 1.0) * (
        1.0 + math.sqrt(2.0 * math.log(T * (T + 1) * n_arms / (math.sqrt(math.pi) * delta)))
    )


def theoretical_regret_curves(T, gamma_minus, gamma_star, *, sigma, sigma_plus, norm_bound,
                              delta, n_arms, max_gap):
    """Closed-form regret bounds for Kernel UCB and Kernel TS.

    ``gamma_minus[i]`` and ``gamma_star[i]`` are the information gains at
    ``sigma_minus**2 / C**2`` and ``sigma**2 / C**2`` after ``T[i]`` steps.
    """
    T = np.asarray(T, dtype=np.float64)
    gm = np.asarray(gamma_minus, dtype=np.float64)
    gs = np.asarray(gamma_star, dtype=np.float64)
    C = norm_bound
    ratio = C * C / (sigma * sigma)
    core = (sigma_plus / sigma) * (1.0 + np.sqrt(2.0 * math.log(4.0 / delta) + 2.0 * gm)) * C * np.sqrt(
        T * 2.0 * gs / math.log1p(ratio)
    )
    ucb = 2.0 * core
    c2 = ts_constant_c2(delta)
    c1 = np.array([ts_constant_c1(t, n_arms, delta) if t > 0 else 0.0 for t in T])
    ts = c1 * core + c2 * max_gap * np.sqrt(T * math.log(1.0 / delta)) + 4.0 * math.pi * math.e * max_gap * delta
    return ucb, ts


def infogain_budget_check(trace, env, params, sigma=None):
    """Compare the summed scaled variances of a run with their information-gain budget.

    Returns a dict with both sides; ``applicable`` is False when some step
    used a regularization below ``sigma**2 / C**2``.
    """
    sigma = env.noise_sigma if sigma is None else sigma
    C = params.norm_bound_C
    lam_star = sigma**2 / C**2
    T = trace.arm_index.size
    if T == 0:
        return {"lhs": 0.0, "rhs": 0.0, "applicable": True, "holds": True}
    lhs = float(sigma**2 * np.sum(trace.prior_var_kernel / trace.lambda_t))
    gram = kernel_matrix(env.truth.kernel, env.arms)
    counts = np.bincount(trace.arm_index, minlength=env.arms.size).astype(np.float64)
    v = np.flatnonzero(counts)
    gamma = aggregated_information_gain(gram[np.ix_(v, v)], counts[v], lam_star)
    rhs = 2.0 * C**2 / math.log1p(C**2 / sigma**2) * gamma
    applicable = bool(np.all(trace.lambda_t >= lam_star * (1.0 - 1e-12)))
    # relative slack covers summation rounding only
    holds = lhs <= rhs * (1.0 + 1e-9) + 1e-12
    return {"lhs": lhs, "rhs": rhs, "applicable": applicable, "holds": bool(holds)}
