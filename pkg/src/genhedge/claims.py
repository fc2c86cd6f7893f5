"""Claims with explicit hedging integrands.

Utility-optimal terminal wealth is written through the state variable
``z_t = -(e, W^Q_t)``: the Girsanov density satisfies ``y xi_T = h(z_T)`` with
``h(z) = y exp(z/c + T/(2c^2))`` and the integrand of ``I(y xi_T)`` is
``alpha_t * e`` with ``alpha_t = E_Q[g(z_T) | F_t]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .basis import ModelSpec
from .curves import DEFAULT_QUADRATURE, CurveFunction, QuadratureSpec
from .errors import ConfigurationError, DomainError, InvariantError, NumericError
from .hedging import ClaimRepresentation
from .market import PathBundle

Fn = Callable[[np.ndarray], np.ndarray]


@lru_cache(maxsize=4)
def _hermite(n: int):
    x, w = hermegauss(n)
    return x, w / np.sqrt(2 * np.pi)


def gaussian_expectation(func: Fn, mean, var, nodes: int = 64) -> np.ndarray:
    """E[func(mean + sqrt(var) U)] for standard normal U, elementwise in mean/var."""
    u, w = _hermite(nodes)
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
    with np.errstate(over="ignore", invalid="ignore"):
        vals = func(mean[..., None] + sd[..., None] * u)
        out = vals @ w
    if not np.all(np.isfinite(out)):
        raise NumericError("Gaussian quadrature overflowed; the integrand grows too fast in the tails "
                           f"(mean range [{mean.min():.3g}, {mean.max():.3g}], max var {float(np.max(var)):.3g})")
    return out


@dataclass(frozen=True)
class UtilitySpec:
    """A utility with marginal utility ``dU`` and its inverse ``I``.

    ``growth_C`` and ``growth_p`` bound |I(x)| + |x I'(x)| by C (x^p + x^-p).
    ``I``/``dI`` are ``None`` when the inverse does not exist on (0, inf).
    """

    name: str
    U: Fn
    dU: Fn
    I: Fn | None
    dI: Fn | None
    growth_C: float = 2.0
    growth_p: float = 1.0


def log_utility() -> UtilitySpec:
    return UtilitySpec("log", np.log, lambda x: 1.0 / x, lambda x: 1.0 / x, lambda x: -1.0 / x**2, 2.0, 1.0)


def power_utility(gamma: float) -> UtilitySpec:
    """U(x) = x^gamma / gamma for gamma < 1, gamma != 0."""
    if not gamma < 1 or gamma == 0:
        raise ConfigurationError("power utility needs gamma < 1 and gamma != 0")
    r = 1.0 / (gamma - 1.0)
    p = abs(r)
    C = 1.0 + abs(r)
    return UtilitySpec(
        f"power({gamma:g})",
        lambda x: x**gamma / gamma,
        lambda x: x ** (gamma - 1.0),
        lambda x: x**r,
        lambda x: r * x ** (r - 1.0),
        C,
        p,
    )


def linear_utility() -> UtilitySpec:
    """U(x) = x: constant marginal utility, no inverse on (0, inf)."""
    return UtilitySpec("linear", lambda x: x, lambda x: np.ones_like(x), None, None)


def check_admissible(u: UtilitySpec, grid: np.ndarray | None = None) -> None:
    """Verify the growth and range conditions on a log grid; raise DomainError otherwise."""
    x = np.logspace(-6, 6, 241) if grid is None else np.asarray(grid, dtype=float)
    if u.I is None or u.dI is None:
        raise DomainError(f"{u.name}: marginal utility has no inverse on (0, inf)")
    d = u.dU(x)
    if not (np.all(d > 0) and np.all(np.diff(d) < 0)):
        raise DomainError(f"{u.name}: marginal utility must be positive and strictly decreasing")
    if not (d[0] >= 1e3 * d[-1] and d[-1] <= 1e-3 * d[0]):
        raise DomainError(f"{u.name}: marginal utility does not sweep (0, inf)")
    if not np.allclose(u.I(d), x, rtol=1e-8):
        raise DomainError(f"{u.name}: I is not the inverse of U'")
    lhs = np.abs(u.I(x)) + np.abs(x * u.dI(x))
    rhs = u.growth_C * (x**u.growth_p + x ** (-u.growth_p))
    if np.any(lhs > rhs * (1 + 1e-12)):
        worst = x[np.argmax(lhs / rhs)]
        raise DomainError(f"{u.name}: growth bound fails near x = {worst:.3g}")


def is_admissible(u: UtilitySpec) -> bool:
    try:
        check_admissible(u)
    except DomainError:
        return False
    return True


@dataclass(frozen=True)
class OptimalClaim:
    """X = I(y xi_T) with its representation through z_t = -(e, W^Q_t)."""

    utility: UtilitySpec
    y: float
    c: float
    T: float
    nodes: int = 64

    def __post_init__(self):
        if self.y <= 0:
            raise DomainError("y must be positive")
        if self.utility.I is None:
            raise DomainError(f"{self.utility.name} has no inverse marginal utility")

    @classmethod
    def from_spec(cls, utility: UtilitySpec, y: float, spec: ModelSpec, nodes: int = 64) -> "OptimalClaim":
        return cls(utility, y, spec.c, spec.T, nodes)

    def h(self, z) -> np.ndarray:
        return self.y * np.exp(np.asarray(z) / self.c + self.T / (2 * self.c**2))

    def g(self, z) -> np.ndarray:
        hz = self.h(z)
        return -hz * self.utility.dI(hz) / self.c

    def payoff(self, z) -> np.ndarray:
        return self.utility.I(self.h(z))

    def alpha(self, t, z) -> np.ndarray:
        """E_Q[g(z_T) | z_t = z]; at t = T this is g(z)."""
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self.T + 1e-12):
            raise DomainError("t outside [0, T]")
        var = np.maximum(self.T - t, 0.0)
        z = np.asarray(z, dtype=float)
        var = np.broadcast_to(var, np.broadcast_shapes(var.shape, z.shape))
        return gaussian_expectation(self.g, np.broadcast_to(z, var.shape), var, self.nodes)

    def alpha_log_closed_form(self, t, z) -> np.ndarray:
        """Log-utility alpha: exp(-z/c - t/(2c^2)) / (c y)."""
        return np.exp(-np.asarray(z) / self.c - np.asarray(t) / (2 * self.c**2)) / (self.c * self.y)

    def mean(self) -> float:
        """E_Q[X] with z_T ~ N(0, T) under Q."""
        return float(gaussian_expectation(self.payoff, 0.0, self.T, self.nodes))


def state_path(bundle: PathBundle) -> np.ndarray:
    """z_t = -(e, W^Q_t) on every step."""
    return -bundle.zeta


def optimal_wealth(utility: UtilitySpec, y: float, bundle: PathBundle) -> np.ndarray:
    """I(y xi_T) path by path."""
    if y <= 0:
        raise DomainError("y must be positive")
    xi_T = bundle.xi[:, -1]
    if np.any(xi_T <= 0):
        raise InvariantError("non-positive density", xi_T.min())
    return utility.I(y * xi_T)


def alpha_path(claim: OptimalClaim, bundle: PathBundle) -> np.ndarray:
    """alpha_t on every grid time, shape (paths, steps+1)."""
    z = state_path(bundle)
    out = np.empty_like(z)
    for n, t in enumerate(bundle.times):
        out[:, n] = claim.alpha(t, z[:, n])
    return out


def truncated_claim(claim: OptimalClaim, n: int, bundle: PathBundle) -> ClaimRepresentation:
    """Discrete claim with integrand alpha_t e^(n) (first n components of e)."""
    spec = bundle.spec
    if not 0 <= n <= spec.N:
        raise DomainError(f"truncation level {n} outside [0, {spec.N}]")
    e_n = np.where(np.arange(1, spec.N + 1) <= n, spec.e, 0.0)
    alphas = alpha_path(claim, bundle)
    return ClaimRepresentation(bundle, claim.mean(), lambda step: alphas[:, step, None] * e_n)


# bounded smooth claim -------------------------------------------------------

def smooth_bump(y) -> np.ndarray:
    """F(y) = exp(1 - 1/(1 - (y-1)^2)) on (0, 2), zero elsewhere; F(1) = 1."""
    y = np.asarray(y, dtype=float)
    q = 1.0 - (y - 1.0) ** 2
    out = np.zeros_like(y)
    inside = q > 1.0 / 700.0
    out[inside] = np.exp(1.0 - 1.0 / q[inside])
    return out


def smooth_step(x, lo: float = 0.75, hi: float = 1.0) -> np.ndarray:
    """C-infinity step: 0 below ``lo``, 1 above ``hi``."""
    x = np.asarray(x, dtype=float)
    s = np.clip((x - lo) / (hi - lo), 0.0, 1.0)

    def f(u):
        out = np.zeros_like(u)
        pos = u > 0
        out[pos] = np.exp(-1.0 / u[pos])
        return out

    a, b = f(s), f(1.0 - s)
    return a / (a + b)


def default_nu1_weight(x) -> np.ndarray:
    """w(x) = s(x) / (1 + x) with s a smooth step on [3/4, 1]; nu1 * p_0 = w."""
    x = np.asarray(x, dtype=float)
    return smooth_step(x) / (1.0 + x)


def default_nu1(spec: ModelSpec) -> CurveFunction:
    """Positive density e^{ax} w(x); its integral against p_0 grows like log x."""
    a = spec.a
    return CurveFunction(lambda x: np.exp(a * x) * default_nu1_weight(x), spec.domain_end,
                         (), ((0.75, spec.domain_end),), name="nu1")


def nu1_coefficients(spec: ModelSpec, nu1: CurveFunction, quad: QuadratureSpec = DEFAULT_QUADRATURE) -> np.ndarray:
    """<nu1, p_0 sigma_i> = k_i int nu1 h_i."""
    out = np.empty(spec.N)
    for i in range(spec.N):
        h = spec.basis[i + 1]
        out[i] = spec.k_array[i] * quad.integrate(lambda x: nu1(x) * h(x), h.support)
    return out


@dataclass
class SmoothBoundedClaim:
    """Y_T from dY = F(Y) dM, dM = sum_i m_i dW^Q_i, Y_0 = 1, clamped to [0, 2]."""

    bundle: PathBundle
    m_coeffs: np.ndarray
    Y: np.ndarray
    overshoots: int

    @property
    def value(self) -> np.ndarray:
        return self.Y[:, -1]

    def representation(self) -> ClaimRepresentation:
        Y, m = self.Y, self.m_coeffs
        rep = ClaimRepresentation(self.bundle, 1.0, lambda step: smooth_bump(Y[:, step])[:, None] * m)
        return rep


def bounded_smooth_claim(spec: ModelSpec, nu1: CurveFunction | None, bundle: PathBundle,
                         m_coeffs: np.ndarray | None = None, max_sq_norm: float = np.inf,
                         ) -> tuple[np.ndarray, ClaimRepresentation, SmoothBoundedClaim]:
    """Simulate Y and return (Y_T, its representation, the full claim object).

    The representation's discrete sum reproduces the unclamped Euler values;
    when a clamp is active the two differ and ``overshoots`` counts them.
    """
    if m_coeffs is None:
        m_coeffs = nu1_coefficients(spec, nu1 if nu1 is not None else default_nu1(spec))
    m_coeffs = np.asarray(m_coeffs, dtype=float)
    if float(m_coeffs @ m_coeffs) > max_sq_norm:
        raise ConfigurationError(
            f"sum of squared coefficients {float(m_coeffs @ m_coeffs):.3g} exceeds {max_sq_norm:.3g}; shrink k")
    Y = np.empty((bundle.n_paths, bundle.n_steps + 1))
    Y[:, 0] = 1.0
    overshoots = 0
    for n in range(bundle.n_steps):
        step = Y[:, n] + smooth_bump(Y[:, n]) * (bundle.dW_Q[:, n] @ m_coeffs)
        out = (step < 0) | (step > 2)
        overshoots += int(out.sum())
        Y[:, n + 1] = np.clip(step, 0.0, 2.0)
    claim = SmoothBoundedClaim(bundle, m_coeffs, Y, overshoots)
    return claim.value, claim.representation(), claim
