from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from genhedge.claims import (
    OptimalClaim,
    UtilitySpec,
    alpha_path,
    bounded_smooth_claim,
    check_admissible,
    default_nu1,
    default_nu1_weight,
    gaussian_expectation,
    is_admissible,
    linear_utility,
    log_utility,
    nu1_coefficients,
    optimal_wealth,
    power_utility,
    smooth_bump,
    smooth_step,
    state_path,
    truncated_claim,
)
from genhedge.errors import ConfigurationError, DomainError, NumericError
from genhedge.market import simulate

C = 0.915888


@pytest.fixture(scope="module")
def q_paths(small_spec):
    return simulate(small_spec, "Q", 3000)


def quad_alpha(claim, t, z):
    """Independent conditional expectation of g(z_T) by adaptive quadrature."""
    sd = math.sqrt(claim.T - t)
    f = lambda u: float(claim.g(z + sd * u)) * stats.norm.pdf(u)
    return integrate.quad(f, -12, 12, epsabs=0, epsrel=1e-11, limit=200)[0]


# Gaussian expectations and alpha -----------------------------------------------------

def test_gaussian_expectation_moments():
    got = gaussian_expectation(lambda x: x**2, np.array([0.0, 1.5]), np.array([1.0, 0.25]))
    np.testing.assert_allclose(got, [1.0, 2.5], rtol=1e-13)
    np.testing.assert_allclose(gaussian_expectation(np.exp, 0.3, 0.8), math.exp(0.3 + 0.4), rtol=1e-12)


def test_gaussian_expectation_overflow_is_reported():
    with pytest.raises(NumericError):
        gaussian_expectation(lambda x: np.exp(x**2 * 50), 0.0, 100.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(-3.0, 3.0))
def test_log_alpha_matches_closed_form(t, z):
    claim = OptimalClaim(log_utility(), 1.0, C, 1.0)
    assert float(claim.alpha(t, z)) == pytest.approx(float(claim.alpha_log_closed_form(t, z)), rel=1e-6)


@pytest.mark.parametrize("t,z", [(0.0, 0.0), (0.5, -1.2), (0.9, 2.0)])
def test_power_alpha_against_adaptive_quadrature(t, z):
    claim = OptimalClaim(power_utility(-1.0), 0.7, C, 1.0)
    assert float(claim.alpha(t, z)) == pytest.approx(quad_alpha(claim, t, z), rel=1e-8)


def test_alpha_at_maturity_is_g():
    z = np.linspace(-3, 3, 13)
    for u in (log_utility(), power_utility(0.5), power_utility(-2.0)):
        claim = OptimalClaim(u, 1.3, C, 1.0)
        np.testing.assert_allclose(claim.alpha(1.0, z), claim.g(z), rtol=1e-13)


def test_alpha_is_positive_and_rejects_bad_times():
    claim = OptimalClaim(log_utility(), 2.0, C, 1.0)
    t = np.linspace(0, 1, 11)[:, None]
    assert np.all(claim.alpha(t, np.linspace(-4, 4, 9)) > 0)
    with pytest.raises(DomainError):
        claim.alpha(1.5, 0.0)


def test_log_claim_mean_is_reciprocal_multiplier():
    for y in (0.5, 1.0, 4.0):
        assert OptimalClaim(log_utility(), y, C, 1.0).mean() == pytest.approx(1 / y, rel=1e-12)


def test_claim_rejects_bad_inputs():
    with pytest.raises(DomainError):
        OptimalClaim(log_utility(), 0.0, C, 1.0)
    with pytest.raises(DomainError):
        OptimalClaim(linear_utility(), 1.0, C, 1.0)


# utilities ----------------------------------------------------------------------------

def test_power_utility_minus_one_inverse():
    u = power_utility(-1.0)
    x = np.logspace(-3, 3, 25)
    np.testing.assert_allclose(u.I(x), x**-0.5, rtol=1e-14)
    np.testing.assert_allclose(u.I(u.dU(x)), x, rtol=1e-12)
    with pytest.raises(ConfigurationError):
        power_utility(1.0)
    with pytest.raises(ConfigurationError):
        power_utility(0.0)


def test_admissibility_of_utilities():
    assert is_admissible(log_utility())
    assert is_admissible(power_utility(-1.0))
    assert not is_admissible(linear_utility())
    tight = UtilitySpec("tight log", np.log, lambda x: 1 / x, lambda x: 1 / x, lambda x: -1 / x**2, 0.5, 1.0)
    with pytest.raises(DomainError, match="growth"):
        check_admissible(tight)


# optimal wealth and its representation ---------------------------------------------------

def test_payoff_of_state_matches_wealth(q_paths):
    claim = OptimalClaim.from_spec(log_utility(), 1.5, q_paths.spec)
    z_T = state_path(q_paths)[:, -1]
    np.testing.assert_allclose(claim.payoff(z_T), optimal_wealth(log_utility(), 1.5, q_paths), rtol=1e-12)


def test_q_mean_of_log_wealth(q_paths):
    y = 2.0
    x = optimal_wealth(log_utility(), y, q_paths)
    assert abs(x.mean() - 1 / y) <= 3 * x.std(ddof=1) / math.sqrt(len(x))


def test_alpha_path_at_time_zero(q_paths):
    claim = OptimalClaim.from_spec(log_utility(), 1.0, q_paths.spec)
    al = alpha_path(claim, q_paths.subset(np.arange(5)))
    np.testing.assert_allclose(al[:, 0], 1 / q_paths.spec.c, rtol=1e-10)


def test_full_representation_converges_to_payoff(small_spec):
    fine = simulate(small_spec, "Q", 400, n_steps=256)
    claim = OptimalClaim.from_spec(log_utility(), 1.0, small_spec)
    errs = []
    for factor in (4, 1):
        b = fine.coarsen(factor) if factor > 1 else fine
        rep = truncated_claim(claim, small_spec.N, b)
        errs.append(np.mean(np.abs(rep.value - claim.payoff(state_path(b)[:, -1]))))
    # the discrete stochastic integral converges with strong order 1/2
    assert 1.5 <= errs[0] / errs[1] <= 2.6


def test_truncation_levels(q_paths):
    claim = OptimalClaim.from_spec(log_utility(), 1.0, q_paths.spec)
    zero = truncated_claim(claim, 0, q_paths.subset(np.arange(10)))
    np.testing.assert_array_equal(zero.value, np.full(10, claim.mean()))
    with pytest.raises(DomainError):
        truncated_claim(claim, q_paths.spec.N + 1, q_paths)
    # only the even e-components vanish, so levels 1 and 2 coincide
    sub = q_paths.subset(np.arange(10))
    np.testing.assert_array_equal(truncated_claim(claim, 1, sub).value, truncated_claim(claim, 2, sub).value)


# bounded smooth claim ------------------------------------------------------------------

def test_smooth_bump_profile():
    assert smooth_bump(1.0) == 1.0
    y = np.linspace(-1, 3, 401)
    f = smooth_bump(y)
    assert np.all((f >= 0) & (f <= 1))
    assert np.all(f[(y <= 0) | (y >= 2)] == 0)
    np.testing.assert_allclose(f, smooth_bump(2 - y), atol=1e-15)


def test_smooth_step_profile():
    x = np.linspace(0, 2, 801)
    s = smooth_step(x)
    assert np.all(s[x <= 0.75] == 0) and np.all(s[x >= 1.0] == 1)
    assert np.all(np.diff(s) >= 0)
    assert smooth_step(0.875) == pytest.approx(0.5, abs=1e-15)


def test_nu1_weight_has_logarithmic_mass(small_spec):
    w = lambda x: float(default_nu1_weight(x))
    mass = integrate.quad(w, 1.0, 5.0, epsabs=0, epsrel=1e-12)[0]
    assert mass == pytest.approx(math.log(6 / 2), rel=1e-10)
    nu = default_nu1(small_spec)
    x = np.linspace(0, 7, 50)
    np.testing.assert_allclose(nu(x) * small_spec.p0(x), default_nu1_weight(x), rtol=1e-13, atol=1e-300)


def test_nu1_coefficients_against_adaptive_oracle(small_spec):
    nu = default_nu1(small_spec)
    coeffs = nu1_coefficients(small_spec, nu)
    for i in (1, 3):
        h = small_spec.basis[i]
        oracle = integrate.quad(lambda x: float(nu(np.array([x]))[0] * h(np.array([x]))[0]),
                                i - 0.25, i + 0.25, epsabs=0, epsrel=1e-12, limit=200)[0]
        assert coeffs[i - 1] == pytest.approx(small_spec.k_array[i - 1] * oracle, rel=1e-9)


def test_bounded_claim_with_zero_coefficients(q_paths):
    sub = q_paths.subset(np.arange(20))
    value, rep, claim = bounded_smooth_claim(sub.spec, None, sub, m_coeffs=np.zeros(sub.spec.N))
    assert np.all(claim.Y == 1.0) and np.all(value == 1.0)
    np.testing.assert_array_equal(rep.value, value)


def test_bounded_claim_range_mean_and_representation(q_paths):
    m = np.full(q_paths.spec.N, 0.4)
    value, rep, claim = bounded_smooth_claim(q_paths.spec, None, q_paths, m_coeffs=m)
    assert np.all((claim.Y >= 0) & (claim.Y <= 2))
    assert abs(value.mean() - 1.0) <= 3 * value.std(ddof=1) / math.sqrt(len(value))
    if claim.overshoots == 0:
        np.testing.assert_allclose(rep.value, value, atol=1e-12)
    with pytest.raises(ConfigurationError):
        bounded_smooth_claim(q_paths.spec, None, q_paths, m_coeffs=m, max_sq_norm=0.1)
