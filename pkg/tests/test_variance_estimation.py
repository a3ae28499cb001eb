import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_log
from kernelstream.confidence_bounds import ConfidenceParams
from kernelstream.kernel_core import KernelSpec
from kernelstream.streaming_regression import ObservationLog, StreamingStatistics, fit, information_gain
from kernelstream.variance_estimation import (
    NoiseBracket,
    alpha_factor,
    c_term,
    d_term,
    empirical_sigma,
    lower_bounds,
    raw_sigma_hat_bracket,
    run_bracket,
    sigma_lower,
    sigma_upper,
    update_bracket,
    upper_bounds,
    variance_diagnostics,
)


def test_c_term_spot_values():
    # correction ln(pi^2 ln^2(2) / 6) < 0 is clamped
    assert math.log(math.pi**2 * math.log(2) ** 2 / 6) < 0
    assert c_term(2, 0.1) == pytest.approx(3.3025850929940457, abs=1e-12)
    assert c_term(1, 0.1) == pytest.approx(math.log(10 * math.e), abs=1e-12)
    assert c_term(100, 0.1) == pytest.approx(8.3972845108121061, rel=1e-12)
    assert c_term(1000, 0.1) == pytest.approx(9.5603972451397974, rel=1e-12)
    with pytest.raises(ValueError):
        c_term(0, 0.1)


@given(st.integers(1, 10**9), st.floats(1e-6, 0.99))
@settings(max_examples=80, deadline=None)
def test_c_term_floor_and_growth(t, delta):
    c = c_term(t, delta)
    assert c >= math.log(math.e / delta) - 1e-12
    assert c_term(t + 1, delta) >= c - 1e-12


def test_d_term_spot_values():
    assert d_term(0, 0.1) == pytest.approx(4.6051701859880914, abs=1e-12)
    assert d_term(0, 1 / math.e) == pytest.approx(2.0, abs=1e-12)


def test_alpha_factor_cases():
    assert alpha_factor(1, c_term(1, 0.1), 0.0) == 0.0
    assert alpha_factor(3, c_term(3, 0.1), d_term(0, 0.1)) == 0.0
    assert alpha_factor(10, 0.0, 0.0) == 1.0
    assert alpha_factor(400, c_term(400, 0.1), d_term(5, 0.1)) == pytest.approx(0.539049827576114, rel=1e-12)


@given(st.integers(1, 10**6), st.floats(0, 100), st.floats(0, 1000))
@settings(max_examples=80, deadline=None)
def test_alpha_in_unit_interval(t, c, d):
    assert 0.0 <= alpha_factor(t, c, d) <= 1.0


def test_empirical_sigma_closed_forms(kernel):
    lam, y = 0.3, 1.7
    log = ObservationLog.from_arrays([0.2], [y])
    assert empirical_sigma(log, lam, kernel) == pytest.approx(abs(y) * lam / (1 + lam), rel=1e-14)
    zeros = ObservationLog.from_arrays(np.linspace(0, 1, 9), np.zeros(9))
    assert empirical_sigma(zeros, 0.1, kernel) == 0.0
    with pytest.raises(ValueError):
        empirical_sigma(ObservationLog.empty(), 0.1, kernel)


def test_empirical_sigma_dense_oracle(kernel):
    log = random_log(11, 50)
    d = log.xs[:, None] - log.xs[None, :]
    K = np.exp(-d * d / 0.18)
    w = np.linalg.solve(K + 0.04 * np.eye(50), log.ys)
    r = log.ys - K @ w
    assert empirical_sigma(log, 0.04, kernel) == pytest.approx(math.sqrt(r @ r / 50), rel=1e-9)
    stats = StreamingStatistics.from_log(log, kernel)
    assert stats.sigma_hat(0.04) == pytest.approx(math.sqrt(r @ r / 50), rel=1e-9)


def _oracle_cases(s_hat, t, lam, lam_star, delta, sp, norm, gamma_star, max_term):
    """Independent evaluation of both bracket cases at 40 digits."""
    mp.mp.dps = 40
    s_hat, lam, norm, sp = (mp.mpf(v) for v in (s_hat, lam, norm, sp))
    lt = mp.log(t)
    corr = max(mp.mpf(0), mp.log(mp.pi**2 * lt**2 / 6)) if t > 1 else mp.mpf(0)
    C = mp.log(mp.e / delta) * (1 + corr / mp.log(1 / mp.mpf(delta)))
    D = 2 * mp.log(1 / mp.mpf(delta)) + 2 * mp.mpf(gamma_star)
    root = mp.sqrt(C / t) + mp.sqrt((C + 2 * D) / t)
    up1 = s_hat + sp * root + mp.sqrt(2 * sp * norm * mp.sqrt(lam * D) / t)
    alpha = max(1 - root, mp.mpf(0))
    X = norm * mp.sqrt(lam * D) / (2 * t)
    up2 = mp.inf if alpha == 0 else (mp.sqrt(s_hat * alpha + X) + mp.sqrt(X)) ** 2 / alpha**2
    bias = norm * mp.sqrt(lam / t * (1 - 1 / mp.mpf(max_term)))
    lo1 = s_hat - sp * mp.sqrt(2 * C / t) - bias
    lo2 = (s_hat - bias) / (1 + mp.sqrt(2 * C / t))
    return float(up1), float(up2), float(lo1), float(lo2)


def test_cases_against_dual_implementation(kernel, truth):
    """Recorded 200-step trace, bounds from first principles."""
    log = random_log(21, 200, truth)
    stats = StreamingStatistics.from_log(log, kernel)
    lam, lam_star, delta, sp, C = 0.02, 4e-4, 0.025, 1.0, 5.0
    s = fit(log, lam, kernel)
    r = log.ys - s.mean(log.xs)
    s_hat = math.sqrt(r @ r / 200)
    gamma_star = information_gain(log, lam_star, kernel).gamma
    prior_vars = [
        fit(ObservationLog.from_arrays(log.xs[:i], log.ys[:i]), lam, kernel).variance_kernel(log.xs[i])[0]
        for i in range(200)
    ]
    max_term = max(1 + v / lam for v in prior_vars)
    up1, up2, lo1, lo2 = _oracle_cases(s_hat, 200, lam, lam_star, delta, sp, C, gamma_star, max_term)
    got_up = upper_bounds(stats, lam, lam_star, delta, sp, C)
    got_lo = lower_bounds(stats, lam, delta, sp, C)
    assert got_up[0] == pytest.approx(up1, rel=1e-9)
    assert got_up[1] == pytest.approx(up2, rel=1e-9) if math.isfinite(up2) else got_up[1] == math.inf
    assert got_lo[0] == pytest.approx(lo1, rel=1e-9, abs=1e-12)
    assert got_lo[1] == pytest.approx(lo2, rel=1e-9, abs=1e-12)
    assert sigma_upper(stats, lam, lam_star, delta, sp, C) == min(got_up)
    assert sigma_lower(stats, lam, delta, sp, C) == max(max(got_lo), 0.0)
    diag = variance_diagnostics(stats, lam, lam_star, delta, sp, C, true_sigma=0.1)
    assert 0 <= diag.alpha <= 1 and diag.sigma_hat == pytest.approx(s_hat, rel=1e-9)
    assert diag.raw_hat_lower <= diag.raw_hat_upper


def test_vacuous_upper_without_prior(kernel):
    stats = StreamingStatistics.from_log(random_log(1, 5), kernel)
    assert sigma_upper(stats, 0.04, 4e-4, 0.025, None, 5.0) == math.inf
    with pytest.raises(ValueError):
        sigma_upper(stats, 0.04, 0.0, 0.025, None, 5.0)


def test_lower_bound_zero_for_zero_residual(kernel):
    stats = StreamingStatistics.from_log(ObservationLog.from_arrays(np.linspace(0, 1, 6), np.zeros(6)), kernel)
    assert sigma_lower(stats, 0.04, 0.025, 1.0, 5.0) == 0.0


def test_case1_upper_tends_to_sigma_hat():
    """Correction terms of case 1 vanish as t grows with sigma_hat fixed."""
    class Fixed:
        def __init__(self, t):
            self.t = t

        def sigma_hat(self, lam):
            return 0.1

        def information_gain(self, lam):
            return 10.0

        def max_gain_term(self, lam):
            return 1 + 1 / lam

    gaps = [upper_bounds(Fixed(t), 4e-4, 4e-4, 0.025, 1.0, 5.0)[0] - 0.1 for t in (10**3, 10**5, 10**7)]
    assert gaps[0] > gaps[1] > gaps[2] > 0
    lows = [lower_bounds(Fixed(t), 4e-4, 0.025, 1.0, 5.0)[1] for t in (10**3, 10**5, 10**7)]
    assert lows[0] < lows[1] < lows[2] < 0.1


def test_raw_bracket_contains_sigma_hat_typically(kernel, truth):
    log = random_log(5, 300, truth)
    stats = StreamingStatistics.from_log(log, kernel)
    lam = 4e-4
    t = 300
    c = c_term(t, 0.025)
    d = d_term(stats.information_gain(lam), 0.025)
    lo, hi = raw_sigma_hat_bracket(0.1, t, c, d, lam, 5.0, stats.max_gain_term(lam))
    assert lo <= stats.sigma_hat(lam) <= hi


def test_initial_bracket():
    b = NoiseBracket.initial(1.0, 0.01, 5.0)
    assert b.lambda_t == pytest.approx(0.04)
    assert b.lambda_minus == pytest.approx(4e-6)
    assert b.t == 0
    z = NoiseBracket.initial(1.0, 0.0, 5.0)
    assert z.anchor_lambda == pytest.approx(1e-8 / 25)
    with pytest.raises(ValueError):
        NoiseBracket.initial(0.1, 0.2, 5.0)
    with pytest.raises(ValueError):
        NoiseBracket.initial(0.0, 0.0, 5.0)


def test_update_requires_one_new_observation(kernel):
    stats = StreamingStatistics.from_log(random_log(1, 3), kernel)
    with pytest.raises(ValueError):
        update_bracket(NoiseBracket.initial(1.0, 0.01, 5.0), stats, ConfidenceParams(0.025, 5.0), 0.025)


def test_update_follows_the_four_steps(kernel, truth):
    log = random_log(2, 40, truth)
    params = ConfidenceParams(0.025, 5.0)
    b = NoiseBracket.initial(1.0, 0.01, 5.0)
    stats = StreamingStatistics(kernel)
    for x, y in zip(log.xs, log.ys):
        stats.append(x, y)
        lam = b.lambda_t
        lo = sigma_lower(stats, lam, 0.025, 1.0, 5.0)
        sm = max(min(lo, b.sigma_plus), b.sigma_minus)
        anchor = sm**2 / 25 if sm > 0 else b.lambda_floor
        up = sigma_upper(stats, lam, anchor, 0.025, 1.0, 5.0)
        sp = max(min(up, b.sigma_plus), sm, b.sigma_floor)
        nb = update_bracket(b, stats, params, 0.025)
        assert (nb.sigma_minus, nb.sigma_plus) == (sm, sp)
        assert nb.lambda_t == sp**2 / 25 and nb.lambda_minus == sm**2 / 25
        b = nb


@given(st.integers(0, 10_000), st.floats(0.05, 3.0), st.floats(0.0, 0.04), st.booleans(), st.booleans())
@settings(max_examples=25, deadline=None)
def test_bracket_invariants(seed, sp0, sm0, knows, adaptive):
    """Monotone, ordered and consistent with lambda at every step, for any data."""
    kernel = KernelSpec(0.3)
    rng = np.random.default_rng(seed)
    noise = rng.choice([0.0, 0.1, 1.0])
    log = ObservationLog.from_arrays(rng.uniform(0, 1, 30), noise * rng.standard_normal(30))
    sm0 = min(sm0, sp0)
    brackets = run_bracket(log, kernel, ConfidenceParams(0.025, 5.0), 0.025, sp0, sm0,
                           knows_sigma_plus_prior=knows, adaptive=adaptive)
    sp = np.array([b.sigma_plus for b in brackets])
    sm = np.array([b.sigma_minus for b in brackets])
    assert np.all(np.diff(sp) <= 0) and np.all(np.diff(sm) >= 0) and np.all(sm <= sp)
    for b in brackets:
        assert b.lambda_t == b.sigma_plus**2 / 25
        assert b.lambda_minus == b.sigma_minus**2 / 25
        assert b.lambda_floor - 1e-18 <= b.lambda_t <= sp0**2 / 25


def test_zero_noise_single_input_is_well_defined(kernel):
    log = ObservationLog.from_arrays(np.full(20, 0.5), np.zeros(20))
    brackets = run_bracket(log, kernel, ConfidenceParams(0.025, 5.0), 0.025, 1.0, 0.01)
    assert brackets[-1].sigma_minus == 0.01
    assert all(math.isfinite(b.lambda_t) and b.lambda_t > 0 for b in brackets)
