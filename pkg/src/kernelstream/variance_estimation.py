"""Streaming bracketing of the noise level and the adaptive regularization loop.

The bracket functions read data through a *statistics provider*: any object
with an integer ``t`` and the methods ``sigma_hat(lam)``,
``max_gain_term(lam)`` and ``information_gain(lam)``. ``StreamingStatistics``
is the dense provider for arbitrary inputs; ``bandits.ArmStatistics`` is the
aggregated one for a discrete arm grid.
"""
import math
from dataclasses import dataclass, replace

from .streaming_regression import StreamingStatistics, fit

LAMBDA_FLOOR_SIGMA = 1e-4


def empirical_sigma(log, lam, kernel):
    """Root-mean-square residual of the fit at ``lam`` over the whole log."""
    t = len(log)
    if t == 0:
        raise ValueError("empirical_sigma is undefined on an empty log")
    state = fit(log, lam, kernel)
    resid = log.ys - state.mean(log.xs)
    return math.sqrt(float(resid @ resid) / t)


def c_term(t, delta):
    """Time-uniform deviation constant for the squared noise.

    Uses ``ln(pi^2 ln^2(t) / 6)`` as the correction and clamps it at zero,
    so the result never drops below ``ln(e / delta)``.
    """
    if t < 1:
        raise ValueError("c_term needs t >= 1")
    lt = math.log(t)
    corr = 0.0
    if lt > 0:
        corr = max(0.0, math.log(math.pi**2 * lt * lt / 6.0))
    return math.log(math.e / delta) * (1.0 + corr / math.log(1.0 / delta))


def d_term(gamma, delta):
    return 2.0 * math.log(1.0 / delta) + 2.0 * gamma


def alpha_factor(t, c, d):
    return max(1.0 - math.sqrt(c / t) - math.sqrt((c + 2.0 * d) / t), 0.0)


def _cross(norm, lam, d, t):
    # the recurring sqrt(lam) * ||f|| * sqrt(D) / t group
    return norm * math.sqrt(lam * d) / t


def upper_bounds(stats, lam, lambda_star_lower, delta_prime, sigma_plus_prior, norm_bound):
    """Both upper bounds ``(case1, case2)``; case1 is None without a prior."""
    t = stats.t
    s_hat = stats.sigma_hat(lam)
    c = c_term(t, delta_prime)
    d = d_term(stats.information_gain(lambda_star_lower), delta_prime)
    cross = _cross(norm_bound, lam, d, t)
    case1 = None
    if sigma_plus_prior is not None:
        case1 = (
            s_hat
            + sigma_plus_prior * (math.sqrt(c / t) + math.sqrt((c + 2.0 * d) / t))
            + math.sqrt(2.0 * sigma_plus_prior * cross)
        )
    alpha = alpha_factor(t, c, d)
    if alpha == 0.0:
        case2 = math.inf
    else:
        half = 0.5 * cross
        case2 = (math.sqrt(s_hat * alpha + half) + math.sqrt(half)) ** 2 / alpha**2
    return case1, case2


def lower_bounds(stats, lam, delta_prime, sigma_plus_prior, norm_bound):
    """Both lower bounds ``(case1, case2)`` before flooring at zero."""
    t = stats.t
    s_hat = stats.sigma_hat(lam)
    c = c_term(t, delta_prime)
    bias = norm_bound * math.sqrt(lam / t * (1.0 - 1.0 / stats.max_gain_term(lam)))
    case1 = None
    if sigma_plus_prior is not None:
        case1 = s_hat - sigma_plus_prior * math.sqrt(2.0 * c / t) - bias
    case2 = (s_hat - bias) / (1.0 + math.sqrt(2.0 * c / t))
    return case1, case2


def sigma_upper(stats, lam, lambda_star_lower, delta_prime, sigma_plus_prior, norm_bound):
    """Best of the two upper bounds; ``inf`` when only the vacuous case remains."""
    if not lambda_star_lower > 0:
        raise ValueError("lambda_star_lower must be positive")
    case1, case2 = upper_bounds(
        stats, lam, lambda_star_lower, delta_prime, sigma_plus_prior, norm_bound
    )
    return case2 if case1 is None else min(case1, case2)


def sigma_lower(stats, lam, delta_prime, sigma_plus_prior, norm_bound):
    case1, case2 = lower_bounds(stats, lam, delta_prime, sigma_plus_prior, norm_bound)
    best = case2 if case1 is None else max(case1, case2)
    return max(best, 0.0)


def raw_sigma_hat_bracket(sigma, t, c, d, lam, norm, max_term):
    """Interval that ``sigma_hat`` itself should fall in when ``sigma`` is known.

    Diagnostic only; the bracket loop never uses it.
    """
    upper = sigma * (1.0 + math.sqrt(2.0 * c / t)) + norm * math.sqrt(
        lam / t * (1.0 - 1.0 / max_term)
    )
    lower = sigma * (1.0 - math.sqrt(c / t) - math.sqrt((c + 2.0 * d) / t)) - math.sqrt(
        2.0 * sigma * math.sqrt(lam) * norm * math.sqrt(d) / t
    )
    return lower, upper


@dataclass(frozen=True)
class VarianceDiagnostics:
    sigma_hat: float
    c_t: float
    d_t: float
    alpha: float
    case1_upper: float
    case2_upper: float
    case1_lower: float
    case2_lower: float
    raw_hat_lower: float = math.nan
    raw_hat_upper: float = math.nan


def variance_diagnostics(
    stats, lam, lambda_star_lower, delta_prime, sigma_plus_prior, norm_bound, true_sigma=None
):
    t = stats.t
    c = c_term(t, delta_prime)
    d = d_term(stats.information_gain(lambda_star_lower), delta_prime)
    up1, up2 = upper_bounds(stats, lam, lambda_star_lower, delta_prime, sigma_plus_prior, norm_bound)
    lo1, lo2 = lower_bounds(stats, lam, delta_prime, sigma_plus_prior, norm_bound)
    raw = (math.nan, math.nan)
    if true_sigma is not None:
        raw = raw_sigma_hat_bracket(true_sigma, t, c, d, lam, norm_bound, stats.max_gain_term(lam))
    nan = math.nan
    return VarianceDiagnostics(
        sigma_hat=stats.sigma_hat(lam),
        c_t=c,
        d_t=d,
        alpha=alpha_factor(t, c, d),
        case1_upper=nan if up1 is None else up1,
        case2_upper=up2,
        case1_lower=nan if lo1 is None else lo1,
        case2_lower=lo2,
        raw_hat_lower=raw[0],
        raw_hat_upper=raw[1],
    )


@dataclass(frozen=True)
class NoiseBracket:
    """Running ``[sigma_minus, sigma_plus]`` interval and the regularizations it implies.

    ``lambda_t`` is the regularization for the next acquisition and
    ``lambda_minus`` the lower anchor used for information gains.
    """

    sigma_minus: float
    sigma_plus: float
    lambda_minus: float
    lambda_t: float
    t: int
    knows_sigma_plus_prior: bool
    sigma_plus_prior: float
    norm_bound: float
    sigma_floor: float
    # last raw estimates, kept for tracing
    upper_estimate: float = math.nan
    lower_estimate: float = math.nan
    clamped: bool = False

    @classmethod
    def initial(cls, sigma_plus_prior, sigma_minus_prior, norm_bound, knows_sigma_plus_prior=True):
        if not sigma_plus_prior > 0:
            raise ValueError("sigma_plus_prior must be positive")
        if not 0 <= sigma_minus_prior <= sigma_plus_prior:
            raise ValueError("need 0 <= sigma_minus_prior <= sigma_plus_prior")
        floor = max(sigma_minus_prior, LAMBDA_FLOOR_SIGMA)
        if floor > sigma_plus_prior:
            raise ValueError("sigma_plus_prior is below the regularization floor")
        C2 = norm_bound**2
        return cls(
            sigma_minus=float(sigma_minus_prior),
            sigma_plus=float(sigma_plus_prior),
            lambda_minus=sigma_minus_prior**2 / C2,
            lambda_t=sigma_plus_prior**2 / C2,
            t=0,
            knows_sigma_plus_prior=knows_sigma_plus_prior,
            sigma_plus_prior=float(sigma_plus_prior),
            norm_bound=float(norm_bound),
            sigma_floor=floor,
        )

    @property
    def lambda_floor(self):
        return self.sigma_floor**2 / self.norm_bound**2

    @property
    def anchor_lambda(self):
        """Lower regularization anchor; falls back to the floor while ``sigma_minus`` is 0."""
        return self.lambda_minus if self.lambda_minus > 0 else self.lambda_floor


def update_bracket(bracket, stats, params, delta_prime, eval_lambda=None):
    """One step of the lower-then-upper bracket update.

    Evaluates both bounds at ``eval_lambda`` (default: the regularization
    that was used to acquire the newest observation), tightens
    ``sigma_minus`` by a running max, sets the anchor from it, tightens
    ``sigma_plus`` by a running min and derives the next regularization.

    The new lower estimate is capped at the previous upper bound and the new
    upper bound is floored at the new lower bound, so the interval never
    inverts; ``clamped`` records when either cap was active.
    """
    if stats.t != bracket.t + 1:
        raise ValueError(f"bracket at t={bracket.t} cannot absorb a log of length {stats.t}")
    C = params.norm_bound_C
    lam = bracket.lambda_t if eval_lambda is None else float(eval_lambda)
    prior = bracket.sigma_plus_prior if bracket.knows_sigma_plus_prior else None

    lower = sigma_lower(stats, lam, delta_prime, prior, C)
    s_minus = max(min(lower, bracket.sigma_plus), bracket.sigma_minus)
    lambda_minus = s_minus**2 / C**2
    anchor = lambda_minus if lambda_minus > 0 else bracket.lambda_floor

    upper = sigma_upper(stats, lam, anchor, delta_prime, prior, C)
    s_plus = max(min(upper, bracket.sigma_plus), s_minus, bracket.sigma_floor)
    clamped = lower > bracket.sigma_plus or upper < s_minus

    return replace(
        bracket,
        sigma_minus=s_minus,
        sigma_plus=s_plus,
        lambda_minus=lambda_minus,
        lambda_t=s_plus**2 / C**2,
        t=stats.t,
        upper_estimate=upper,
        lower_estimate=lower,
        clamped=clamped,
    )


def run_bracket(log, kernel, params, delta_prime, sigma_plus_prior, sigma_minus_prior,
                knows_sigma_plus_prior=True, adaptive=True):
    """Replay a log through the bracket loop; returns the list of brackets.

    ``adaptive=False`` evaluates every step at the fixed initial
    regularization ``sigma_plus_prior**2 / C**2``.
    """
    bracket = NoiseBracket.initial(
        sigma_plus_prior, sigma_minus_prior, params.norm_bound_C, knows_sigma_plus_prior
    )
    fixed = None if adaptive else bracket.lambda_t
    stats = StreamingStatistics(kernel, capacity=max(64, len(log)))
    out = [bracket]
    for x, y in zip(log.xs, log.ys):
        stats.append(x, y)
        bracket = update_bracket(bracket, stats, params, delta_prime, eval_lambda=fixed)
        out.append(bracket)
    return out
