"""Generalized hedging portfolios and their approximating sequences.

A generalized integrand ``mu_t = alpha_t (p_0 / p_t) nu`` is an unbounded
linear form: ``nu`` acts on compactly supported curves through a density and
is *assigned* the value 0 on ``p_0``. Truncations ``nu^(n)`` are honest dual
elements ``b^n delta_0 + density_n`` with ``b^n = -<density_n, p_0>``, which
keeps the zero assignment at every level while the risky part
``<density_n, p_0>`` diverges.

Three kinds of truncation are supported:

``plain``
    density_n = sum_{i<=n} (e^i / k_i) S h_i
``tilde``
    the plain density plus ``d^(n) S h_{J(n)}``, with ``d^(n)`` solved so the
    time-0 bank position hits a prescribed limit
``partC``
    density_n = nu1 * g_n with a smooth cut-off ``g_n``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .basis import HALF_WIDTH, ModelSpec, _mollifier, build_model
from .claims import (
    OptimalClaim,
    alpha_path,
    bounded_smooth_claim,
    default_nu1,
    default_nu1_weight,
    optimal_wealth,
    smooth_bump,
    smooth_step,
)
from .curves import DEFAULT_QUADRATURE, CurveFunction, DualElement, QuadratureSpec, inner_h, pair
from .errors import CertificateFailure, DomainError, KScheduleRefinementRequired
from .hedging import bump_combination
from .market import PathBundle

KINDS = ("plain", "tilde", "partC")
SERIES_THRESHOLDS = (1e3, 1e6)
# the part-C partial integrals grow like log x, so their thresholds are small
PARTC_THRESHOLDS = (1.0, 2.0, 5.0)
PARTC_CROSSING = 0.5
PARTC_ENDPOINTS = (2.0, 14.0, 1e2, 1e3, 1e4, 1e5, 1e6)


def J(n: int) -> int:
    """Index of the extra bump in the tilde sequence: n+2 for odd n, n+1 for even n."""
    if n < 1:
        raise DomainError("J is defined for n >= 1")
    return n + 2 if n % 2 else n + 1


def cutoff(n: float) -> CurveFunction:
    """Smooth g_n: 1 on [0, n], 0 on [n+1, inf)."""
    return CurveFunction(lambda x: 1.0 - smooth_step(x, n, n + 1.0), math.inf, (), ((0.0, n + 1.0),))


def compact_test_function(lo: float, hi: float, domain_end: float, scale: float = 1.0) -> CurveFunction:
    """A smooth bump supported on [lo, hi] with two analytic derivatives."""
    if not 0 < lo < hi:
        raise DomainError("need 0 < lo < hi")
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    return CurveFunction(
        lambda x: scale * _mollifier((np.asarray(x) - mid) / half),
        domain_end,
        (lambda x: scale * _mollifier((np.asarray(x) - mid) / half, 1) / half,
         lambda x: scale * _mollifier((np.asarray(x) - mid) / half, 2) / half**2),
        ((lo, hi),),
        name=f"test[{lo:g},{hi:g}]",
    )


def default_test_functions(spec: ModelSpec) -> list[DomainElement]:
    """p_0 plus compact bumps reaching into several basis supports."""
    ends = [1.1, 2.6, 5.0, 7.3, min(spec.N - 0.1, 10.6)]
    tests = [DomainElement(None, 1.0)]
    tests += [DomainElement(compact_test_function(0.5, hi, spec.domain_end)) for hi in ends]
    tests.append(DomainElement(compact_test_function(0.5, 3.9, spec.domain_end), 2.0))
    return tests


def odd_index_sum(n: int) -> float:
    """sum of odd i <= n."""
    m = (n + 1) // 2
    return float(m * m)


@dataclass(frozen=True)
class LimitScenario:
    """Target limit C of the time-0 bank position, in [-inf, inf]."""

    C: float

    @classmethod
    def parse(cls, value) -> "LimitScenario":
        if isinstance(value, str):
            v = value.strip().lower()
            if v in ("+inf", "inf", "+infinity", "infinity"):
                return cls(math.inf)
            if v in ("-inf", "-infinity"):
                return cls(-math.inf)
            try:
                return cls(float(v))
            except ValueError as exc:
                raise DomainError(f"cannot parse limit {value!r}") from exc
        return cls(float(value))

    @property
    def label(self) -> str:
        if self.C == math.inf:
            return "+inf"
        if self.C == -math.inf:
            return "-inf"
        return repr(float(self.C))


@dataclass(frozen=True)
class DomainElement:
    """f = compact + p0_coefficient * p_0 with ``compact`` supported away from 0."""

    compact: CurveFunction | None = None
    p0_coefficient: float = 0.0

    def __post_init__(self):
        if self.compact is not None:
            lo, _ = self.compact.effective_support
            if lo <= 0.0:
                raise DomainError("compact part must vanish near 0")


@dataclass
class UnboundedForm:
    """nu: a density on compactly supported curves and the value 0 on p_0."""

    spec: ModelSpec
    weights: np.ndarray | None = None
    density: CurveFunction | None = None
    value_on_p0: float = 0.0
    domain: str = "span(C0inf(0,inf) u {p0})"

    def pair(self, f: DomainElement, quad: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
        out = self.value_on_p0 * f.p0_coefficient
        if f.compact is None:
            return out
        if self.weights is not None:
            return out + _series_pair(self.spec, self.weights, f.compact, quad)
        g = f.compact
        return out + quad.integrate(lambda x: self.density(x) * g(x), g.support)

    def terms_touched(self, f: CurveFunction) -> list[int]:
        """Bump indices whose support meets supp f (only these terms can be non-zero)."""
        return _touched(self.spec, f)


def _touched(spec: ModelSpec, f: CurveFunction, upto: int | None = None) -> list[int]:
    upto = spec.N if upto is None else upto
    out = []
    for i in range(1, upto + 1):
        if any(lo < i + HALF_WIDTH and hi > i - HALF_WIDTH for lo, hi in f.support):
            out.append(i)
    return out


def _series_pair(spec: ModelSpec, weights: np.ndarray, f: CurveFunction, quad: QuadratureSpec) -> float:
    """sum_i w_i (h_i, f)_H over the finitely many bumps meeting supp f."""
    total = 0.0
    for i in _touched(spec, f, len(weights)):
        if weights[i - 1] != 0:
            total += weights[i - 1] * inner_h(spec.basis[i], f, 1, quad)
    return float(total)


def build_nu(spec: ModelSpec, nu1: CurveFunction | None = None) -> UnboundedForm:
    """The series form sum_i (e^i/k_i) S h_i, or a given density for the part-C claim."""
    if nu1 is not None:
        return UnboundedForm(spec, density=nu1)
    return UnboundedForm(spec, weights=spec.e / spec.k_array)


@dataclass
class ApproxSequence:
    """Truncations nu^(n); ``d`` holds d^(n) at index n (tilde kind only)."""

    spec: ModelSpec
    kind: str
    d: np.ndarray | None = None
    nu1: CurveFunction | None = None
    scenario: LimitScenario | None = None
    quad: QuadratureSpec = DEFAULT_QUADRATURE
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown kind {self.kind!r}")
        if self.kind == "tilde" and self.d is None:
            raise DomainError("tilde kind needs d")
        if self.kind == "partC" and self.nu1 is None:
            self.nu1 = default_nu1(self.spec)

    @property
    def max_level(self) -> int:
        N = self.spec.N
        if self.kind == "plain":
            return N
        if self.kind == "tilde":
            return N - 2 if N % 2 == 0 else N - 1  # largest n with J(n) <= N
        return N + 1

    @property
    def levels(self) -> list[int]:
        return list(range(1, self.max_level + 1))

    def _check(self, n: int) -> None:
        if not 0 <= n <= self.max_level:
            raise DomainError(f"level {n} outside [0, {self.max_level}] for kind {self.kind}")

    def weights(self, n: int) -> np.ndarray:
        """Series weights w with density_n = sum_i w_i S h_i (series kinds)."""
        self._check(n)
        spec = self.spec
        w = np.where(np.arange(1, spec.N + 1) <= n, spec.e / spec.k_array, 0.0)
        if self.kind == "tilde" and n >= 1:
            w[J(n) - 1] += self.d[n]
        return w

    def density(self, n: int) -> CurveFunction:
        self._check(n)
        if self.kind == "partC":
            return self.nu1 * cutoff(n)
        w = self.weights(n)
        c0, c2 = bump_combination(self.spec.basis, w), bump_combination(self.spec.basis, w, order=2)
        return CurveFunction(lambda x: c0(x) - c2(x), self.spec.domain_end, (), c0.support)

    def risky_value(self, n: int) -> float:
        """R_n = <density_n, p_0>."""
        key = ("R", n)
        if key not in self._cache:
            if n == 0:
                val = 0.0
            elif self.kind == "partC":
                p0 = self.spec.p0
                dens = self.density(n)
                val = float(self.quad.integrate(lambda x: dens(x) * p0(x), dens.support))
            else:
                val = float(self.weights(n) @ self.spec.lambdas)
            self._cache[key] = val
        return self._cache[key]

    def vol_coefficients(self, n: int) -> np.ndarray:
        """<density_n, p_0 sigma_j> for every factor j."""
        key = ("V", n)
        if key not in self._cache:
            spec = self.spec
            if n == 0:
                val = np.zeros(spec.N)
            elif self.kind == "partC":
                dens = self.density(n)
                val = np.array([spec.k_array[j] * self.quad.integrate(lambda x: dens(x) * h(x), h.support)
                                for j, h in enumerate(spec.basis.bumps)])
            else:
                val = self.weights(n) * spec.k_array
            self._cache[key] = val
        return self._cache[key]

    def element(self, n: int) -> DualElement:
        """nu^(n) = -R_n delta_0 + density_n."""
        return DualElement(-self.risky_value(n), self.density(n))

    def pair(self, n: int, f: DomainElement) -> float:
        """<nu^(n), f> on the domain of nu; the p_0 component contributes 0."""
        self._check(n)
        if f.compact is None or n == 0:
            return 0.0
        if self.kind == "partC":
            dens, g = self.density(n), f.compact
            return float(self.quad.integrate(lambda x: dens(x) * g(x), g.support))
        return _series_pair(self.spec, self.weights(n), f.compact, self.quad)


def plain_sequence(spec: ModelSpec) -> ApproxSequence:
    return ApproxSequence(spec, "plain")


def partc_sequence(spec: ModelSpec, nu1: CurveFunction | None = None) -> ApproxSequence:
    return ApproxSequence(spec, "partC", nu1=nu1)


# construction of mu^(n) ------------------------------------------------------

def build_mu_n(seq: ApproxSequence, n: int, bundle: PathBundle, step: int, alpha) -> DualElement:
    """mu^(n)_t = alpha_t (p_0/p_t) nu^(n), realized path-wise.

    delta_0 part: alpha_t b^n / p_t(0); regular part: alpha_t (p_0/p_t) density_n.
    """
    alpha = np.asarray(alpha, dtype=float)
    p0 = seq.spec.p0
    p_t0 = bundle.curve_values(step, [0.0])[:, 0]
    if n == 0:
        return DualElement(np.zeros_like(p_t0), None)
    dens = seq.density(n)

    def regular(x):
        return alpha[:, None] * (p0(x) / bundle.curve_values(step, x)) * dens(x)

    reg = CurveFunction(regular, seq.spec.domain_end, (), dens.support)
    return DualElement(-alpha * seq.risky_value(n) / p_t0, reg)


def mu_pairings(seq: ApproxSequence, n: int, bundle: PathBundle, step: int, alpha,
                quad: QuadratureSpec = DEFAULT_QUADRATURE):
    """Quadrature values of pair(mu^(n)_t, p_t), its gross scale, and pair(mu^(n)_t, p_t sigma_j)."""
    mu = build_mu_n(seq, n, bundle, step, alpha)
    p_t = bundle.curve(step)
    spec = seq.spec
    if mu.regular_part is None:
        z = np.zeros(bundle.n_paths)
        return z, z, np.zeros((bundle.n_paths, spec.N))
    delta_part = mu.delta0_coefficient * bundle.curve_values(step, [0.0])[:, 0]
    reg = mu.regular_part
    risky = pair(DualElement(0.0, reg), p_t, quad)
    gross = quad.integrate(lambda x: np.abs(reg(x) * p_t(x)), reg.support)
    vol = np.zeros((bundle.n_paths, spec.N))
    for j, sig in enumerate(spec.sigma):
        vol[:, j] = pair(DualElement(0.0, mu.regular_part), p_t * sig, quad)
    scale = np.abs(delta_part) + gross
    return delta_part + risky, scale, vol


def limit_pair_on_p_t(form: UnboundedForm, alpha) -> np.ndarray:
    """pair(mu_t, p_t) = alpha_t <nu, p_0>: p_t is carried to p_0 by the density ratio."""
    return np.asarray(alpha, dtype=float) * form.pair(DomainElement(None, 1.0))


# claims driving a generalized portfolio -------------------------------------

@dataclass
class ClaimContext:
    """Everything a scenario needs from the claim: x0, alpha_t and the bundle."""

    part: str
    bundle: PathBundle
    x0: float
    alphas: np.ndarray
    target: np.ndarray
    nu1: CurveFunction | None = None
    overshoots: int = 0
    nu1_weight: Callable | None = None  # nu1 * p_0, evaluated without overflow

    @property
    def alpha0(self) -> float:
        return float(self.alphas[0, 0])


def optimal_claim_context(bundle: PathBundle, claim: OptimalClaim) -> ClaimContext:
    return ClaimContext("B", bundle, claim.mean(), alpha_path(claim, bundle),
                        optimal_wealth(claim.utility, claim.y, bundle))


def bounded_claim_context(bundle: PathBundle, nu1: CurveFunction | None = None) -> ClaimContext:
    spec = bundle.spec
    weight = default_nu1_weight if nu1 is None else None
    nu1 = default_nu1(spec) if nu1 is None else nu1
    _, _, claim = bounded_smooth_claim(spec, nu1, bundle)
    return ClaimContext("C", bundle, 1.0, smooth_bump(claim.Y), claim.value, nu1, claim.overshoots, weight)


def alpha_statistics(alphas: np.ndarray, dt: float) -> dict:
    """Size of alpha_t across the sample: reported only, never certified.

    For log utility alpha is unbounded in the state, so the sample sup grows
    with the path count; the per-path sup quantiles show how fast.
    """
    per_path = np.max(alphas, axis=1)
    return {
        "min": float(alphas.min()),
        "sup": float(per_path.max()),
        "per_path_sup_median": float(np.median(per_path)),
        "per_path_sup_q99": float(np.quantile(per_path, 0.99)),
        "mean_sq_integral": float(np.mean(np.sum(alphas[:, :-1] ** 2, axis=1) * dt)),
    }


def value_process(seq: ApproxSequence, n: int, ctx: ClaimContext) -> np.ndarray:
    """Y^n_t = sum_{s<t} alpha_s sum_j pair(mu^(n)_s/alpha_s, p_s sigma_j) dW^Q_j, shape (paths, steps+1)."""
    b = ctx.bundle
    coeffs = seq.vol_coefficients(n)
    incr = ctx.alphas[:, :-1] * (b.dW_Q @ coeffs)
    out = np.zeros((b.n_paths, b.n_steps + 1))
    np.cumsum(incr, axis=1, out=out[:, 1:])
    return out


def riskfree_investment(seq: ApproxSequence, n: int, ctx: ClaimContext, Yn: np.ndarray | None = None,
                        steps=None) -> np.ndarray:
    """a^n_t = (x0 + Y^n_t - alpha_t R_n) / p_t(0) on the requested steps."""
    b = ctx.bundle
    Yn = value_process(seq, n, ctx) if Yn is None else Yn
    steps = np.arange(b.n_steps + 1) if steps is None else np.atleast_1d(steps)
    p_t0 = np.stack([b.curve_values(int(s), [0.0])[:, 0] for s in steps], axis=1)
    return (ctx.x0 + Yn[:, steps] - ctx.alphas[:, steps] * seq.risky_value(n)) / p_t0


def riskfree_investment_t0(seq: ApproxSequence, n: int, x0: float, alpha0: float) -> float:
    """a^n_0 = x0 - alpha_0 R_n (p_0(0) = 1, Y^n_0 = 0)."""
    return x0 - alpha0 * seq.risky_value(n)


# prescribed limits -----------------------------------------------------------

def solve_d(spec: ModelSpec, scenario: LimitScenario, x0: float, alpha0: float, n: int,
            plain: ApproxSequence | None = None) -> float:
    """d^(n) for the tilde sequence (odd n; even n reuse n-1)."""
    if n % 2 == 0:
        n -= 1
    plain = plain_sequence(spec) if plain is None else plain
    R = plain.risky_value(n)
    lam_J = spec.lambdas[J(n) - 1]
    if scenario.C == math.inf:
        return -2.0 * R / lam_J
    if math.isfinite(scenario.C):
        return (x0 - scenario.C - alpha0 * R) / (alpha0 * lam_J)
    raise DomainError("C = -inf uses the plain sequence")


def prescribe_limit(spec: ModelSpec, scenario: LimitScenario, x0: float, alpha0: float,
                    check: bool = True) -> ApproxSequence:
    """Approximating sequence whose time-0 bank positions tend to C."""
    if scenario.C == -math.inf:
        seq = plain_sequence(spec)
        seq.scenario = scenario
        return seq
    plain = plain_sequence(spec)
    n_max = spec.N - 2 if spec.N % 2 == 0 else spec.N - 1
    d = np.full(n_max + 1, np.nan)
    for n in range(1, n_max + 1):
        d[n] = solve_d(spec, scenario, x0, alpha0, n, plain) if n % 2 else d[n - 1]
    seq = ApproxSequence(spec, "tilde", d=d, scenario=scenario)
    if check:
        bad = constraint_violations(seq)
        if bad:
            caps = suggest_caps(spec, seq, bad)
            raise KScheduleRefinementRequired(
                f"|d^(n) k_J(n)| > 1/n at n = {bad}; tighten k caps", caps)
    return seq


def constraint_products(seq: ApproxSequence) -> np.ndarray:
    """|d^(n) k_{J(n)}| for n = 1..max_level."""
    k = seq.spec.k_array
    return np.array([abs(seq.d[n] * k[J(n) - 1]) for n in seq.levels])


def constraint_violations(seq: ApproxSequence) -> list[int]:
    if seq.kind != "tilde":
        return []
    prods = constraint_products(seq)
    return [n for n, p in zip(seq.levels, prods) if p > 1.0 / n]


def suggest_caps(spec: ModelSpec, seq: ApproxSequence, bad: list[int], safety: float = 0.5) -> np.ndarray:
    caps = np.full(spec.N, np.inf) if spec.extra_caps is None else np.array(spec.extra_caps, dtype=float)
    for n in bad:
        j = J(n)
        caps[j - 1] = min(caps[j - 1], safety * j**2 / (n * abs(seq.d[n])))
    return caps


def decay_caps(spec: ModelSpec, decay: float) -> np.ndarray:
    """Caps that shrink k_i by decay^(i-1) relative to the untuned schedule."""
    if not 0 < decay <= 1:
        raise DomainError("decay must lie in (0, 1]")
    i = np.arange(1, spec.N + 1)
    base = np.minimum(np.abs(spec.lambdas), 1.0 / np.sqrt(1.0 + spec.h2_norms))
    return base * decay ** (i - 1)


def tune_k_caps(spec: ModelSpec, scenarios, x0: float, alpha0: float, decay: float = 1.0,
                safety: float = 0.5) -> ModelSpec:
    """Shrink k so every tilde scenario satisfies |d^(n) k_J(n)| <= safety/n.

    d^(n) only depends on k_1..k_n, so the caps are fixed one odd index at a
    time from the bottom up.
    """
    scenarios = [s if isinstance(s, LimitScenario) else LimitScenario.parse(s) for s in scenarios]
    tilde = [s for s in scenarios if s.C != -math.inf]
    caps = decay_caps(spec, decay) if decay < 1 else np.full(spec.N, np.inf)
    if spec.extra_caps is not None:
        caps = np.minimum(caps, spec.extra_caps)
    current = _rebuild(spec, caps)
    n_max = spec.N - 2 if spec.N % 2 == 0 else spec.N - 1
    for n in range(1, n_max + 1, 2):
        j = J(n)
        for s in tilde:
            d = solve_d(current, s, x0, alpha0, n)
            if d != 0:
                caps[j - 1] = min(caps[j - 1], safety * j**2 / (n * abs(d)))
        current = _rebuild(spec, caps)
    return current


def _rebuild(spec: ModelSpec, caps: np.ndarray) -> ModelSpec:
    finite = np.where(np.isfinite(caps), caps, 1e300)
    return build_model(spec.a, spec.N, spec.T, spec.time_steps, spec.seed, tuple(finite), spec.a_floor)


# certificates ---------------------------------------------------------------

@dataclass
class C1Report:
    values: np.ndarray
    stabilization: list[int]
    support_index: list[int]
    passed: bool
    witness: int | None = None


def support_index(spec: ModelSpec, f: DomainElement, seq: ApproxSequence) -> int:
    """Last level whose density meets supp f (0 if none)."""
    if f.compact is None:
        return 0
    if seq.kind == "partC":
        hi = f.compact.effective_support[1]
        return min(seq.max_level, max(0, math.ceil(hi)))
    odd = [i for i in _touched(spec, f.compact) if i % 2 == 1]
    return max(odd) if odd else 0


def certify_C1(seq: ApproxSequence, tests: list[DomainElement], rtol: float = 1e-12) -> C1Report:
    """Each pairing sequence n -> <nu^(n), f> must be eventually constant."""
    levels = seq.levels
    vals = np.array([[seq.pair(n, f) for n in levels] for f in tests])
    stab, expected = [], []
    for row, f in zip(vals, tests):
        scale = max(1.0, float(np.max(np.abs(row))))
        changed = [levels[m] for m in range(1, len(levels)) if abs(row[m] - row[m - 1]) > rtol * scale]
        stab.append(changed[-1] if changed else (levels[0] if abs(row[0]) > rtol * scale else 0))
        expected.append(support_index(seq.spec, f, seq))
    bad = [i for i, (s, e) in enumerate(zip(stab, expected)) if s != e or s >= levels[-1] + 1]
    return C1Report(vals, stab, expected, not bad, bad[0] if bad else None)


@dataclass
class C2Report:
    levels: list[int]
    dist_sq: np.ndarray
    dist_sq_se: np.ndarray
    sup_dist_sq: np.ndarray
    bound: np.ndarray
    passed: bool
    message: str = ""


def certify_C2(seq: ApproxSequence, ctx: ClaimContext, limit: ApproxSequence | None = None) -> C2Report:
    """Mean-square distance of Y^n to the limit value process.

    The limit is the plain (or part-C) sequence at its top level. Checks:
    distances are within the isometry bound plus 3 standard errors, never
    increase with n, and vanish at the top level of the limit's own kind.
    """
    spec = seq.spec
    if limit is None:
        limit = seq if seq.kind != "tilde" else plain_sequence(spec)
    Y = value_process(limit, limit.max_level, ctx)
    alpha_sq_int = float(np.mean(np.sum(ctx.alphas[:, :-1] ** 2, axis=1) * ctx.bundle.dt))
    m_limit = limit.vol_coefficients(limit.max_level)
    dist, se, sup, bound = [], [], [], []
    for n in seq.levels:
        diff = value_process(seq, n, ctx) - Y
        terminal = diff[:, -1] ** 2
        dist.append(terminal.mean())
        se.append(terminal.std(ddof=1) / math.sqrt(len(terminal)))
        sup.append(np.mean(np.max(diff**2, axis=1)))
        gap = seq.vol_coefficients(n) - m_limit
        bound.append(alpha_sq_int * float(gap @ gap))
    dist, se, sup, bound = map(np.array, (dist, se, sup, bound))
    msgs = []
    if np.any(dist > bound + 3 * se + 1e-14):
        msgs.append("distance exceeds isometry bound")
    tol = 1e-12 * max(1.0, float(dist.max()))
    if np.any(np.diff(dist) > tol):
        msgs.append("distance increases with n")
    if seq.kind == limit.kind and dist[-1] > tol:
        msgs.append("distance does not vanish at the top level")
    return C2Report(seq.levels, dist, se, sup, bound, not msgs, "; ".join(msgs))


@dataclass
class DivergenceTable:
    levels: list
    values: np.ndarray
    lower_bound: np.ndarray | None
    thresholds: list[float]
    monotone: bool
    exceeded: dict
    passed: bool


def series_partial_values(spec: ModelSpec, alpha: float, levels) -> np.ndarray:
    """alpha sum_{odd i<=n} (c/i) lambda_i / k_i."""
    terms = spec.e * spec.lambdas / spec.k_array
    cum = np.cumsum(terms)
    return np.array([alpha * cum[n - 1] for n in levels])


def partc_partial_values(weight: Callable, alpha: float, endpoints) -> np.ndarray:
    """alpha int_0^x nu1 p_0 for each endpoint x; ``weight`` is nu1 * p_0.

    Endpoints may lie far beyond the model domain; the integral is split on a
    doubling grid so adaptive quadrature sees smooth pieces.
    """
    integrand = lambda s: float(weight(np.array([s]))[0])  # noqa: E731
    out, acc, prev = [], 0.0, 0.0
    for x in endpoints:
        cuts = [prev] + [c for c in (0.75, 1.0) if prev < c < x]
        c = max(2.0, prev * 2)
        while c < x:
            if c > prev:
                cuts.append(c)
            c *= 2
        cuts.append(x)
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            acc += integrate.quad(integrand, lo, hi, limit=200, epsabs=0, epsrel=1e-10)[0]
        prev = x
        out.append(alpha * acc)
    return np.array(out)


def divergence_certificate(values, levels, thresholds=(1e3, 1e6), lower_bound=None) -> DivergenceTable:
    """Strict monotone growth of ``values`` and exceedance of every threshold."""
    values = np.asarray(values, dtype=float)
    monotone = bool(np.all(np.diff(values) > 0))
    exceeded = {float(t): next((lv for lv, v in zip(levels, values) if v > t), None) for t in thresholds}
    ok = monotone and all(v is not None for v in exceeded.values())
    if lower_bound is not None:
        ok = ok and bool(np.all(values >= np.asarray(lower_bound) * (1 - 1e-12)))
    return DivergenceTable(list(levels), values, None if lower_bound is None else np.asarray(lower_bound),
                           [float(t) for t in thresholds], monotone, exceeded, ok)


def series_divergence(spec: ModelSpec, alpha: float, thresholds=SERIES_THRESHOLDS, levels=None) -> DivergenceTable:
    levels = list(range(1, spec.N + 1, 2)) if levels is None else list(levels)
    vals = series_partial_values(spec, alpha, levels)
    lower = [alpha * spec.c * odd_index_sum(n) for n in levels]
    return divergence_certificate(vals, levels, thresholds, lower)


def partc_divergence(weight: Callable, alpha: float, thresholds=PARTC_THRESHOLDS,
                     endpoints=None) -> DivergenceTable:
    endpoints = PARTC_ENDPOINTS if endpoints is None else endpoints
    vals = partc_partial_values(weight, alpha, endpoints)
    return divergence_certificate(vals, list(endpoints), thresholds)


# paradox report --------------------------------------------------------------

@dataclass
class Section:
    name: str
    passed: bool
    detail: str
    table: list = field(default_factory=list)


@dataclass
class ParadoxReport:
    scenario: LimitScenario
    part: str
    sections: list[Section]

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.sections)

    def failing(self) -> list[str]:
        return [s.name for s in self.sections if not s.passed]

    def raise_on_failure(self) -> None:
        if not self.passed:
            raise CertificateFailure(f"failing sections: {', '.join(self.failing())}")

    def summary(self) -> str:
        lines = [f"scenario C = {self.scenario.label}, claim part {self.part}"]
        for s in self.sections:
            lines.append(f"[{'PASS' if s.passed else 'FAIL'}] {s.name}: {s.detail}")
        return "\n".join(lines)


def sample_points(bundle: PathBundle, count: int = 16, seed: int = 0) -> list[tuple[int, int]]:
    """``count`` (step, path) pairs, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    steps = rng.integers(0, bundle.n_steps + 1, count)
    paths = rng.integers(0, bundle.n_paths, count)
    return [(int(s), int(p)) for s, p in zip(steps, paths)]


def scenario_sequence(spec: ModelSpec, scenario: LimitScenario, ctx: ClaimContext) -> ApproxSequence:
    """The approximating sequence a scenario certifies: part C cutoffs for C = -inf, else prescribed."""
    if ctx.part == "C" and scenario.C == -math.inf:
        return partc_sequence(spec, ctx.nu1)
    return prescribe_limit(spec, scenario, ctx.x0, ctx.alpha0)


def paradox_report(spec: ModelSpec, scenario: LimitScenario, ctx: ClaimContext,
                   thresholds=None, n_points: int = 16, zero_tol: float = 1e-8,
                   crossing: float | None = None, sample_paths: int = 8,
                   n_levels: int | None = None) -> ParadoxReport:
    """Five-part certificate for one scenario and claim.

    ``n_levels`` limits the divergence table: odd levels up to ``n_levels``
    for the series form, or the first ``n_levels`` endpoints for part C.
    """
    bundle = ctx.bundle
    seq = scenario_sequence(spec, scenario, ctx)
    sections = []

    # (i) replication by (x0, mu^(n)) at the top level of the limit sequence
    limit = plain_sequence(spec) if seq.kind == "tilde" else seq
    top = limit.max_level
    Y = value_process(limit, top, ctx)
    if ctx.part == "C":
        repl_err = float(np.max(np.abs(ctx.x0 + Y[:, -1] - ctx.target)))
        ok = repl_err <= 1e-10 or ctx.overshoots > 0
        detail = f"max |x0 + Y_T - X| = {repl_err:.3e} (clamp events {ctx.overshoots})"
    else:
        # L2 error relative to the L2 size of the claim; a per-path ratio is
        # dominated by the heavy tail of the density
        err = ctx.x0 + Y[:, -1] - ctx.target
        repl_err = float(np.sqrt(np.mean(err**2) / np.mean(ctx.target**2)))
        bound = 3 * math.sqrt(bundle.dt)
        ok = repl_err <= bound
        detail = f"relative L2 error {repl_err:.3e} (bound {bound:.3e})"
    idx = np.arange(min(sample_paths, bundle.n_paths))
    sub = bundle.subset(idx)
    sub_ctx = ClaimContext(ctx.part, sub, ctx.x0, ctx.alphas[idx], ctx.target[idx], ctx.nu1)
    a_T = riskfree_investment(limit, top, sub_ctx, Y[idx], steps=[bundle.n_steps])[:, 0]
    mu_T = build_mu_n(limit, top, sub, bundle.n_steps, sub_ctx.alphas[:, -1])
    theta_val = a_T * sub.curve_values(bundle.n_steps, [0.0])[:, 0] + pair(
        DualElement(0.0, mu_T.regular_part), sub.curve(bundle.n_steps))
    num_err = float(np.max(np.abs(theta_val - (ctx.x0 + Y[idx, -1]))))
    scale = max(1.0, abs(sub_ctx.alphas[:, -1]).max() * abs(limit.risky_value(top)))
    ok = ok and num_err <= 1e-10 * scale
    sections.append(Section("replication", ok, detail + f"; quadrature pairing error {num_err:.3e}"))

    # (ii) zero pairing with p_t
    form = build_nu(spec, ctx.nu1 if ctx.part == "C" else None)
    worst_limit, worst_rel, rows = 0.0, 0.0, []
    for step, path in sample_points(bundle, n_points):
        one = bundle.subset([path])
        alpha = ctx.alphas[[path], step]
        worst_limit = max(worst_limit, float(np.abs(limit_pair_on_p_t(form, alpha)).max()))
        for n in (seq.levels[0], seq.levels[len(seq.levels) // 2], seq.levels[-1]):
            val, gross, _ = mu_pairings(seq, n, one, step, alpha)
            rel = float(abs(val[0]) / max(1.0, gross[0]))
            worst_rel = max(worst_rel, rel)
            rows.append((step, path, n, float(val[0]), float(gross[0])))
    ok = worst_limit <= zero_tol and worst_rel <= zero_tol
    sections.append(Section("zero pairing", ok,
                            f"limit |pair(mu_t, p_t)| <= {worst_limit:.1e}; truncations relative {worst_rel:.2e}",
                            rows))

    # (iii) divergence table
    if ctx.part == "C":
        thr = PARTC_THRESHOLDS if thresholds is None else thresholds
        weight = ctx.nu1_weight
        if weight is None:
            weight = lambda x: ctx.nu1(x) * spec.p0(x)  # noqa: E731
        endpoints = PARTC_ENDPOINTS if n_levels is None else PARTC_ENDPOINTS[:n_levels]
        table = partc_divergence(weight, ctx.alpha0, thr, endpoints)
    else:
        thr = SERIES_THRESHOLDS if thresholds is None else thresholds
        top = spec.N if n_levels is None else min(n_levels, spec.N)
        table = series_divergence(spec, ctx.alpha0, thr, range(1, top + 1, 2))
    lower = [None] * len(table.levels) if table.lower_bound is None else table.lower_bound.tolist()
    sections.append(Section("divergence", table.passed,
                            f"monotone={table.monotone}, first exceedance {table.exceeded}",
                            list(zip(table.levels, table.values.tolist(), lower))))

    # (iv) time-0 bank positions against C
    a0 = np.array([riskfree_investment_t0(seq, n, ctx.x0, ctx.alpha0) for n in seq.levels])
    if crossing is None:
        crossing = PARTC_CROSSING if seq.kind == "partC" else SERIES_THRESHOLDS[0]
    sections.append(_limit_section(seq, scenario, a0, ctx, crossing))

    # (v) a^n_t trajectories on a path sample
    sections.append(_trajectory_section(seq, scenario, sub_ctx))
    return ParadoxReport(scenario, ctx.part, sections)


def _limit_section(seq: ApproxSequence, scenario: LimitScenario, a0: np.ndarray, ctx: ClaimContext,
                   crossing: float) -> Section:
    levels = seq.levels
    rows = list(zip(levels, a0.tolist()))
    C = scenario.C
    if math.isfinite(C):
        # gross size of the cancelling terms in x0 - alpha_0 (R_n + d^(n) lambda_J)
        gross = [abs(seq.weights(n)) @ abs(seq.spec.lambdas) for n in levels]
        scale = max(1.0, ctx.alpha0 * max(gross))
        err = float(np.max(np.abs(a0 - C)))
        viol = constraint_violations(seq)
        ok = err <= 1e-12 * scale and not viol
        return Section("bank position limit", ok, f"max |a^n_0 - C| = {err:.2e}; constraint violations {viol}", rows)
    if seq.kind == "partC":
        odd = np.array(levels)
        vals = a0
    else:
        mask = np.array(levels) % 2 == 1
        odd, vals = np.array(levels)[mask], a0[mask]
    sign = -1.0 if C < 0 else 1.0
    steps = np.diff(vals) * sign
    monotone = bool(np.all(steps[1:] > 0)) if len(steps) > 1 else True
    crossed = bool(sign * vals[-1] > crossing)
    msg = f"monotone beyond first level {monotone}; last value {vals[-1]:.4g}; crosses {sign * crossing:g}: {crossed}"
    ok = monotone and crossed
    if seq.kind != "partC":
        # the gap to x0 is at least alpha_0 c sum_{odd i<=n} i
        gap = np.array([ctx.alpha0 * seq.spec.c * odd_index_sum(n) for n in odd])
        slack = 1e-9 * np.abs(vals)
        if C < 0:
            ok = ok and bool(np.all(vals <= ctx.x0 - gap + slack))
        else:
            ok = ok and bool(np.all(vals >= ctx.x0 + gap - slack))
            ok = ok and not constraint_violations(seq)
    return Section("bank position limit", ok, msg, rows)


def _trajectory_section(seq: ApproxSequence, scenario: LimitScenario, ctx: ClaimContext) -> Section:
    b = ctx.bundle
    steps = np.linspace(0, b.n_steps, 5).astype(int)
    levels = seq.levels if seq.kind == "partC" else [n for n in seq.levels if n % 2 == 1]
    traj = np.stack([riskfree_investment(seq, n, ctx, steps=steps) for n in levels])  # (levels, paths, times)
    rows = [(int(b.path_ids[p]), n, int(s), float(traj[li, p, si]))
            for p in range(b.n_paths) for li, n in enumerate(levels) for si, s in enumerate(steps)]
    if scenario.C == -math.inf and seq.kind != "partC":
        diffs = np.diff(traj[1:], axis=0) if len(levels) > 2 else np.diff(traj, axis=0)
        ok = bool(np.all(diffs < 0))
        return Section("bank trajectories", ok, f"strictly decreasing in n on all sampled (path, t): {ok}", rows)
    ok = bool(np.all(np.isfinite(traj)))
    return Section("bank trajectories", ok, "trajectories reported; finite", rows)
