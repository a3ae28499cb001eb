import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_log
from kernelstream.confidence_bounds import (
    ConfidenceParams,
    beta_bernstein,
    beta_deterministic_cap,
    beta_fixed,
    beta_tuned,
    envelope,
    wang_bound,
)
from kernelstream.streaming_regression import ObservationLog, fit, information_gain

pos = st.floats(1e-6, 1e3)
deltas = st.floats(1e-6, 0.999)
gains = st.floats(0, 1e3)


def test_params_validation():
    with pytest.raises(ValueError):
        ConfidenceParams(0.0, 5.0)
    with pytest.raises(ValueError):
        ConfidenceParams(1.0, 5.0)
    with pytest.raises(ValueError):
        ConfidenceParams(0.1, 0.0)


def test_beta_fixed_spot_value():
    # 0.02 * 5 + 0.1 * sqrt(2 ln 10)
    assert beta_fixed(5, 0.1, 4e-4, 0, 0.1) == pytest.approx(0.31459660262893472, abs=1e-12)


def test_beta_bernstein_spot_value():
    assert beta_bernstein(ConfidenceParams(0.1, 5.0), 1.0, 0.04, 0.0) == pytest.approx(3.1459660262893472, abs=1e-12)


def test_radicand_doubles_when_gamma_equals_log():
    d = 0.1
    base = beta_fixed(1.0, 1.0, 1e-30, 0.0, d)
    assert beta_fixed(1.0, 1.0, 1e-30, math.log(1 / d), d) == pytest.approx(base * math.sqrt(2), rel=1e-12)


def test_wang_spot_values():
    assert wang_bound(2.06, 0.1, 0.0, 0.1) ** 2 == pytest.approx(10.438124699562151, rel=1e-12)
    assert wang_bound(2.06, 0.1, 0.0, 0.1) == pytest.approx(3.2308086757903431, rel=1e-12)


def test_cap_spot_value_and_homogeneity():
    assert beta_deterministic_cap(1.0, 0.0, 0.1) == pytest.approx(3.1459660262893472, abs=1e-12)
    assert beta_deterministic_cap(3.0, 2.0, 0.1) == pytest.approx(3 * beta_deterministic_cap(1.0, 2.0, 0.1))


@given(pos, pos, pos, gains, deltas)
@settings(max_examples=100, deadline=None)
def test_formulas_against_high_precision(norm, sigma, lam, gamma, delta):
    mp.mp.dps = 40
    rad = mp.sqrt(2 * mp.log(1 / mp.mpf(delta)) + 2 * mp.mpf(gamma))
    want = mp.sqrt(lam) * norm + sigma * rad
    assert beta_fixed(norm, sigma, lam, gamma, delta) == pytest.approx(float(want), rel=1e-12)
    assert beta_tuned(norm, sigma, lam, gamma, delta) == beta_fixed(norm, sigma, lam, gamma, delta)
    p = ConfidenceParams(delta, norm)
    assert beta_bernstein(p, sigma, lam, gamma) == beta_fixed(norm, sigma, lam, gamma, delta)
    l2 = (mp.mpf(norm) ** 2 + mp.sqrt(8 * gamma * mp.log(2 / mp.mpf(delta)))
          + mp.sqrt(2 * mp.log(4 / mp.mpf(delta))) * norm + 2 * mp.mpf(gamma) + 2 * sigma * mp.log(2 / mp.mpf(delta)))
    assert wang_bound(norm, sigma, gamma, delta) == pytest.approx(float(mp.sqrt(l2)), rel=1e-12)


@given(pos, pos, gains, gains, deltas)
@settings(max_examples=60, deadline=None)
def test_monotonicity(norm, sigma, g1, g2, delta):
    lo, hi = sorted((g1, g2))
    assert beta_tuned(norm, sigma, 0.1, lo, delta) <= beta_tuned(norm, sigma, 0.2, lo, delta)
    assert wang_bound(norm, sigma, lo, delta) <= wang_bound(norm, sigma, hi, delta)
    p = ConfidenceParams(delta, norm)
    # shrinking sigma_plus and lambda with gamma held fixed never increases beta
    assert beta_bernstein(p, sigma / 2, 0.05, lo) <= beta_bernstein(p, sigma, 0.1, lo)


@given(st.floats(1e-3, 1.0), st.floats(1e-3, 1.0), gains, deltas)
@settings(max_examples=60, deadline=None)
def test_cap_dominates_bernstein(sp_ratio, lam_ratio, gamma, delta):
    """sqrt(lam_t) C <= sigma_plus and gamma(lam_minus) <= gamma(sigma_minus**2 / C**2)."""
    C, sp0 = 5.0, 1.0
    sp = sp0 * sp_ratio
    lam_t = sp**2 / C**2
    p = ConfidenceParams(delta, C)
    assert beta_bernstein(p, sp, lam_t, gamma * lam_ratio) <= beta_deterministic_cap(sp0, gamma, delta) * (1 + 1e-12)


def test_envelope_width_identity(kernel):
    log = random_log(1, 30)
    s = fit(log, 0.04, kernel)
    grid = np.linspace(0, 1, 50)
    env = envelope(s, 1.7, grid)
    np.testing.assert_allclose(env.upper - env.lower, 2 * np.sqrt(s.variance_kernel(grid) / 0.04) * 1.7, atol=1e-10)
    assert np.all(env.lower <= env.upper)
    flat = envelope(s, 0.0, grid)
    np.testing.assert_array_equal(flat.lower, flat.upper)
    with pytest.raises(ValueError):
        envelope(s, -1.0, grid)


def test_envelope_empty_log(kernel):
    s = fit(ObservationLog.empty(), 0.04, kernel)
    env = envelope(s, 2.0, [0.1, 0.7])
    np.testing.assert_allclose(env.half_width, 2.0 / math.sqrt(0.04))
    assert env.contains([0.0, 1.0])


def test_width_shrinks_at_revisited_point(kernel):
    rng = np.random.default_rng(2)
    log = ObservationLog.empty()
    widths = []
    for _ in range(50):
        x = 0.5 if rng.random() < 0.3 else rng.uniform()
        log = log.append(x, rng.standard_normal())
        widths.append(envelope(fit(log, 0.04, kernel), 1.0, [0.5]).half_width[0])
    assert np.all(np.diff(widths) <= 1e-12)


def test_uniform_and_wang_share_shape(kernel, truth):
    """At lam = sigma**2 both widths are multiples of k^{1/2}."""
    log = random_log(3, 40, truth)
    sigma = 0.1
    s = fit(log, sigma**2, kernel)
    g = information_gain(log, sigma**2, kernel).gamma
    grid = np.linspace(0, 1, 30)
    k = s.variance_kernel(grid)
    ratio = (wang_bound(2.0, sigma, g, 0.1) * np.sqrt(k)) / (np.sqrt(k / sigma**2) * beta_fixed(2.0, sigma, sigma**2, g, 0.1))
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-12)
