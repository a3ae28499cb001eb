"""Confidence radii for streaming kernel regression.

Every envelope here has the form ``mean(x) +/- width(x) * beta`` where the
width is ``sqrt(k_{lam,t}(x, x) / lam)`` for the self-normalized radii and
``sqrt(k_{lam,t}(x, x))`` for the per-time baseline of ``wang_bound``.
"""
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfidenceParams:
    delta: float
    norm_bound_C: float

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not self.norm_bound_C > 0:
            raise ValueError("norm_bound_C must be positive")


@dataclass(frozen=True, eq=False)
class Envelope:
    grid: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    beta: float
    lambda_used: float

    @property
    def half_width(self):
        return 0.5 * (self.upper - self.lower)

    def contains(self, values):
        values = np.asarray(values)
        return bool(np.all((self.lower <= values) & (values <= self.upper)))


def _radicand(delta, gamma):
    return 2.0 * math.log(1.0 / delta) + 2.0 * gamma


def beta_fixed(norm, sigma, lam, gamma, delta):
    """Radius for a fixed regularization ``lam`` and known noise level."""
    return math.sqrt(lam) * norm + sigma * math.sqrt(_radicand(delta, gamma))


def beta_tuned(norm, sigma, lambda_next, gamma_at_lambda_star, delta):
    """Radius when ``lambda_next`` was tuned on past data.

    ``gamma_at_lambda_star`` is the information gain at the lower anchor of
    the regularization sequence, not at ``lambda_next``.
    """
    return math.sqrt(lambda_next) * norm + sigma * math.sqrt(
        _radicand(delta, gamma_at_lambda_star)
    )


def beta_bernstein(params, sigma_plus_t, lambda_t, gamma_at_lambda_minus):
    """Fully empirical radius: noise upper bound in place of the noise level."""
    return math.sqrt(lambda_t) * params.norm_bound_C + sigma_plus_t * math.sqrt(
        _radicand(params.delta, gamma_at_lambda_minus)
    )


def beta_deterministic_cap(sigma_plus, gamma_at_sigma_minus, delta):
    """Data-free upper bound on every ``beta_bernstein`` value of a run."""
    return sigma_plus * (1.0 + math.sqrt(_radicand(delta, gamma_at_sigma_minus)))


def wang_bound(norm, sigma, gamma_prev, delta_prime):
    """Per-time radius ``l`` of the baseline bound, valid at ``lam = sigma**2``.

    Pairs with the half-width ``l * sqrt(k_{lam,t}(x, x))``.
    """
    log2 = math.log(2.0 / delta_prime)
    sq = (
        norm**2
        + math.sqrt(8.0 * gamma_prev * log2)
        + math.sqrt(2.0 * math.log(4.0 / delta_prime)) * norm
        + 2.0 * gamma_prev
        + 2.0 * sigma * log2
    )
    return math.sqrt(sq)


def envelope(state, beta, probe_grid):
    """Self-normalized envelope of a posterior on ``probe_grid``."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    grid = np.asarray(probe_grid, dtype=np.float64).ravel()
    mean = state.mean(grid)
    hw = np.sqrt(state.variance_kernel(grid) / state.lam) * beta
    return Envelope(grid, mean, mean - hw, mean + hw, float(beta), float(state.lam))
