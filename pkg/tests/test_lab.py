from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from genhedge.basis import build_model
from genhedge.claims import OptimalClaim, default_nu1_weight, log_utility, truncated_claim
from genhedge.curves import DEFAULT_QUADRATURE, inner_h, pair
from genhedge.errors import CertificateFailure, DomainError, KScheduleRefinementRequired
from genhedge.lab import (
    PARTC_ENDPOINTS,
    ApproxSequence,
    DomainElement,
    J,
    LimitScenario,
    UnboundedForm,
    alpha_statistics,
    bounded_claim_context,
    build_nu,
    certify_C1,
    certify_C2,
    compact_test_function,
    constraint_products,
    cutoff,
    default_test_functions,
    divergence_certificate,
    limit_pair_on_p_t,
    mu_pairings,
    odd_index_sum,
    optimal_claim_context,
    paradox_report,
    partc_divergence,
    partc_partial_values,
    partc_sequence,
    plain_sequence,
    prescribe_limit,
    riskfree_investment,
    riskfree_investment_t0,
    series_divergence,
    series_partial_values,
    solve_d,
    value_process,
)
from genhedge.market import simulate


@pytest.fixture(scope="module")
def b_context(tuned_spec):
    bundle = simulate(tuned_spec, "Q", 200)
    return optimal_claim_context(bundle, OptimalClaim.from_spec(log_utility(), 1.0, tuned_spec))


@pytest.fixture(scope="module")
def c_context(spec):
    return bounded_claim_context(simulate(spec, "Q", 200, n_steps=64))


# index bookkeeping ------------------------------------------------------------------------

def test_extra_bump_index():
    assert [J(n) for n in range(1, 7)] == [3, 3, 5, 5, 7, 7]
    with pytest.raises(DomainError):
        J(0)


@given(st.integers(1, 10_000))
def test_extra_bump_index_is_odd_and_ahead(n):
    j = J(n)
    assert j % 2 == 1 and n < j <= n + 2


@given(st.integers(1, 500))
def test_odd_index_sum(n):
    assert odd_index_sum(n) == sum(range(1, n + 1, 2))


def test_limit_scenario_parsing():
    assert LimitScenario.parse("-inf").C == -math.inf
    assert LimitScenario.parse("+inf").label == "+inf"
    assert LimitScenario.parse("2.5").C == 2.5
    assert LimitScenario.parse(0).label == "0.0"
    with pytest.raises(DomainError):
        LimitScenario.parse("plenty")


def test_sequence_levels(spec):
    assert plain_sequence(spec).max_level == 12
    assert partc_sequence(spec).max_level == 13
    odd = build_model(N=11)
    seq = ApproxSequence(odd, "tilde", d=np.zeros(11))
    assert seq.max_level == 10 and J(seq.max_level) <= odd.N
    with pytest.raises(DomainError):
        ApproxSequence(spec, "tilde")
    with pytest.raises(DomainError):
        plain_sequence(spec).weights(13)


def test_cutoff_and_test_functions(spec):
    g = cutoff(4)
    x = np.linspace(0, 6, 601)
    assert np.all(g(x[x <= 4]) == 1) and np.all(g(x[x >= 5]) == 0)
    with pytest.raises(DomainError):
        compact_test_function(0.0, 1.0, spec.domain_end)
    with pytest.raises(DomainError):
        DomainElement(spec.p0)
    assert len(default_test_functions(spec)) == 7


# the unbounded form ----------------------------------------------------------------------

def test_nu_assigns_zero_to_p0(spec):
    nu = build_nu(spec)
    assert nu.pair(DomainElement(None, 1.0)) == 0.0
    assert nu.value_on_p0 == 0.0


def test_nu_on_compact_curve_matches_full_series(spec):
    f = compact_test_function(0.5, 3.0, spec.domain_end)
    nu = build_nu(spec)
    assert nu.terms_touched(f) == [1, 2, 3]
    full = sum(spec.e[i] / spec.k_array[i] * inner_h(spec.basis[i + 1], f, 1) for i in range(spec.N))
    assert nu.pair(DomainElement(f, 3.0)) == pytest.approx(full, rel=1e-12)


def test_truncations_pair_to_zero_with_p0(spec):
    seq = plain_sequence(spec)
    for n in (1, 5, 12):
        R = seq.risky_value(n)
        assert R == pytest.approx(sum(spec.e[i] * spec.lambdas[i] / spec.k_array[i] for i in range(n)), rel=1e-13)
        # quadrature pairing of the honest dual element with p_0
        val = pair(seq.element(n), spec.p0, DEFAULT_QUADRATURE)
        assert abs(val) <= 1e-8 * abs(R)


def test_vol_coefficients_are_truncated_direction(spec):
    seq = plain_sequence(spec)
    np.testing.assert_allclose(seq.vol_coefficients(5), np.where(np.arange(12) < 5, spec.e, 0), rtol=1e-14)


def test_mu_pairings_vanish_at_every_level(b_context, tuned_spec):
    seq = prescribe_limit(tuned_spec, LimitScenario(0.0), b_context.x0, b_context.alpha0)
    one = b_context.bundle.subset([3])
    for n in seq.levels:
        val, gross, vol = mu_pairings(seq, n, one, 40, b_context.alphas[[3], 40])
        assert abs(val[0]) <= 1e-8 * max(1.0, gross[0])
        np.testing.assert_allclose(vol[0], b_context.alphas[3, 40] * seq.vol_coefficients(n),
                                   rtol=1e-7, atol=1e-9 * gross[0])


# divergence -------------------------------------------------------------------------------

def test_series_values_dominate_odd_sum(spec):
    alpha = 1 / spec.c
    levels = list(range(1, 13, 2))
    vals = series_partial_values(spec, alpha, levels)
    assert np.all(vals >= [alpha * spec.c * odd_index_sum(n) for n in levels])
    assert np.all(np.diff(vals) > 0)


def test_tuned_series_crosses_thresholds(tuned_spec):
    table = series_divergence(tuned_spec, 1 / tuned_spec.c)
    assert table.passed
    assert all(level is not None for level in table.exceeded.values())


def test_partc_integral_matches_logarithm():
    head = integrate.quad(lambda u: float(default_nu1_weight(np.array([u]))[0]), 0.75, 1.0,
                          epsabs=0, epsrel=1e-12)[0]
    vals = partc_partial_values(default_nu1_weight, 1.0, [1e2, 1e4])
    np.testing.assert_allclose(vals, head + np.log((1 + np.array([1e2, 1e4])) / 2), rtol=1e-9)
    table = partc_divergence(default_nu1_weight, 1.0)
    assert table.passed and table.levels == list(PARTC_ENDPOINTS)


def test_bounded_values_fail_divergence():
    table = divergence_certificate(1 - 1 / np.arange(1, 20), list(range(1, 20)), (2.0,))
    assert table.monotone and not table.passed


# prescribed limits -----------------------------------------------------------------------

@pytest.mark.parametrize("C", [0.0, -3.0, 7.5])
def test_finite_limits_are_hit_exactly(tuned_spec, C):
    x0, alpha0 = 1.0, 1 / tuned_spec.c
    seq = prescribe_limit(tuned_spec, LimitScenario(C), x0, alpha0)
    a0 = np.array([riskfree_investment_t0(seq, n, x0, alpha0) for n in seq.levels])
    gross = max(abs(seq.weights(n)) @ abs(tuned_spec.lambdas) for n in seq.levels)
    assert np.max(np.abs(a0 - C)) <= 1e-12 * alpha0 * gross
    assert np.all(constraint_products(seq) <= 0.5 / np.array(seq.levels) * (1 + 1e-12))


def test_d_solves_linear_equation(tuned_spec):
    x0, alpha0, C = 1.0, 1 / tuned_spec.c, 2.0
    plain = plain_sequence(tuned_spec)
    for n in (1, 3, 5):
        d = solve_d(tuned_spec, LimitScenario(C), x0, alpha0, n)
        lam_J = tuned_spec.lambdas[J(n) - 1]
        assert x0 - alpha0 * (plain.risky_value(n) + d * lam_J) == pytest.approx(C, abs=1e-9 * alpha0 * abs(d * lam_J))
    assert solve_d(tuned_spec, LimitScenario(C), x0, alpha0, 4) == solve_d(tuned_spec, LimitScenario(C), x0, alpha0, 3)
    with pytest.raises(DomainError):
        solve_d(tuned_spec, LimitScenario(-math.inf), x0, alpha0, 1)


def test_plus_infinity_flips_the_risky_value(tuned_spec):
    x0, alpha0 = 1.0, 1 / tuned_spec.c
    seq = prescribe_limit(tuned_spec, LimitScenario(math.inf), x0, alpha0)
    plain = plain_sequence(tuned_spec)
    for n in (1, 3, 5, 7, 9):
        assert seq.risky_value(n) == pytest.approx(-plain.risky_value(n), rel=1e-10)
    a0 = [riskfree_investment_t0(seq, n, x0, alpha0) for n in range(1, 11, 2)]
    assert np.all(np.diff(a0) > 0) and a0[-1] > 1e3


def test_untuned_schedule_requests_refinement(spec):
    x0, alpha0 = 1.0, 1 / spec.c
    with pytest.raises(KScheduleRefinementRequired) as info:
        prescribe_limit(spec, LimitScenario(0.0), x0, alpha0)
    caps = info.value.caps
    assert caps.shape == (spec.N,) and np.all(caps > 0)
    # feeding the suggested caps back converges after a few rounds
    current = spec
    for _ in range(12):
        try:
            prescribe_limit(current, LimitScenario(0.0), x0, alpha0)
            break
        except KScheduleRefinementRequired as exc:
            current = build_model(extra_caps=tuple(np.where(np.isfinite(exc.caps), exc.caps, 1e300)))
    else:
        pytest.fail("suggested caps did not converge")


# value processes --------------------------------------------------------------------------

def test_top_level_value_process_is_the_claim_integral(b_context, tuned_spec):
    claim = OptimalClaim.from_spec(log_utility(), 1.0, tuned_spec)
    Y = value_process(plain_sequence(tuned_spec), tuned_spec.N, b_context)
    rep = truncated_claim(claim, tuned_spec.N, b_context.bundle)
    np.testing.assert_allclose(b_context.x0 + Y[:, -1], rep.value, rtol=1e-12)


def test_bank_position_at_time_zero(b_context, tuned_spec):
    seq = plain_sequence(tuned_spec)
    for n in (1, 6):
        a = riskfree_investment(seq, n, b_context, steps=[0])[:, 0]
        np.testing.assert_allclose(a, riskfree_investment_t0(seq, n, b_context.x0, b_context.alpha0), rtol=1e-13)


# certificates -------------------------------------------------------------------------------

def test_c1_stabilizes_at_support_index(spec):
    rep = certify_C1(plain_sequence(spec), default_test_functions(spec))
    assert rep.passed
    assert rep.stabilization == rep.support_index
    assert rep.stabilization[0] == 0  # p_0 alone pairs to zero at every level


def test_c1_for_cutoff_sequence(spec):
    rep = certify_C1(partc_sequence(spec), default_test_functions(spec))
    assert rep.passed


def test_c2_for_prescribed_limit(b_context, tuned_spec):
    seq = prescribe_limit(tuned_spec, LimitScenario(0.0), b_context.x0, b_context.alpha0)
    rep = certify_C2(seq, b_context)
    assert rep.passed, rep.message
    assert np.all(np.diff(rep.dist_sq) <= 1e-12 * rep.dist_sq.max())


def test_c2_plain_vanishes_at_top(b_context, tuned_spec):
    rep = certify_C2(plain_sequence(tuned_spec), b_context)
    assert rep.passed and rep.dist_sq[-1] == 0.0


# paradox report and negative controls --------------------------------------------------------

def test_paradox_report_minus_infinity(b_context, tuned_spec):
    rep = paradox_report(tuned_spec, LimitScenario(-math.inf), b_context)
    assert rep.passed, rep.summary()
    assert [s.name for s in rep.sections] == ["replication", "zero pairing", "divergence",
                                              "bank position limit", "bank trajectories"]


def test_paradox_report_part_c(c_context, spec):
    rep = paradox_report(spec, LimitScenario(-math.inf), c_context)
    assert rep.passed, rep.summary()


def test_flipped_volatility_sign_is_caught(b_context, tuned_spec):
    flipped = tuned_spec.with_k(-tuned_spec.k_array)
    assert not series_divergence(flipped, 1 / tuned_spec.c).passed
    bundle = simulate(flipped, "Q", 50, n_steps=64)
    ctx = optimal_claim_context(bundle, OptimalClaim.from_spec(log_utility(), 1.0, flipped))
    rep = paradox_report(flipped, LimitScenario(-math.inf), ctx)
    assert "divergence" in rep.failing()
    with pytest.raises(CertificateFailure):
        rep.raise_on_failure()


def test_nonzero_assignment_on_p0_is_caught(tuned_spec):
    form = UnboundedForm(tuned_spec, weights=tuned_spec.e / tuned_spec.k_array, value_on_p0=1.0)
    assert np.all(limit_pair_on_p_t(form, np.array([0.5, 2.0])) == [0.5, 2.0])


def test_alpha_statistics(b_context):
    stats = alpha_statistics(b_context.alphas, b_context.bundle.dt)
    assert 0 < stats["min"] <= stats["per_path_sup_median"] <= stats["per_path_sup_q99"] <= stats["sup"]
    a = np.array([[1.0, 3.0, 2.0], [2.0, 2.0, 5.0]])
    exact = alpha_statistics(a, 0.5)
    assert exact["sup"] == 5.0 and exact["min"] == 1.0
    assert exact["mean_sq_integral"] == pytest.approx(0.5 * ((1 + 9) + (4 + 4)) / 2)
