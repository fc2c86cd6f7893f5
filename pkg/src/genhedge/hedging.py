"""Hedging portfolios for claims with an explicit integrand.

A claim is represented by its mean and its integrand ``x_t`` against the
Q-Brownian increments. The hedge splits into a bank-account position
``b_t * delta_0`` and a risky functional whose density is

    (p_0 / p_t) * sum_i (x_t^i / k_i) (h_i - h_i'').
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .basis import BumpBasis, ModelSpec
from .curves import (
    DEFAULT_QUADRATURE,
    CurveFunction,
    DualElement,
    QuadratureSpec,
    RieszSolver,
    exponential,
    normalize_intervals,
)
from .errors import DomainError, SingularOperatorError
from .market import PathBundle, short_rates


@dataclass(frozen=True)
class DiagonalOperatorFamily:
    """Operators diagonal in the bump basis, acting on coefficient vectors.

    ``B(t)`` maps y to the curve sum_i e^{-at} k_i y_i h_i (returned as bump
    coefficients), ``A(t) = B(t)* B(t)`` and ``S`` is the isometric part of the
    polar decomposition ``B(t) = S A(t)^{1/2}``.
    """

    a: float
    k: np.ndarray

    @classmethod
    def from_spec(cls, spec: ModelSpec) -> "DiagonalOperatorFamily":
        return cls(spec.a, spec.k_array)

    def B(self, t: float, y) -> np.ndarray:
        return np.exp(-self.a * t) * self.k * np.asarray(y)

    def B_star(self, t: float, coeffs) -> np.ndarray:
        return np.exp(-self.a * t) * self.k * np.asarray(coeffs)

    def A(self, t: float, y) -> np.ndarray:
        return np.exp(-2 * self.a * t) * self.k**2 * np.asarray(y)

    def A_sqrt(self, t: float, y) -> np.ndarray:
        return np.exp(-self.a * t) * np.abs(self.k) * np.asarray(y)

    def A_inv_sqrt(self, t: float, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        active = np.broadcast_to(y != 0, np.broadcast_shapes(y.shape, self.k.shape))
        if np.any(active & (self.k == 0)):
            raise SingularOperatorError("A^{-1/2} applied to a direction with k_i = 0")
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(active, np.exp(self.a * t) * y / np.abs(self.k), 0.0)
        return out

    def S(self, y) -> np.ndarray:
        return np.sign(self.k) * np.asarray(y)

    def SA_inv_sqrt(self, t: float, y) -> np.ndarray:
        """Bump coefficients of S A(t)^{-1/2} y, i.e. e^{at} y_i / k_i."""
        return self.S(self.A_inv_sqrt(t, y))

    def ell(self, t: float, domain_end: float) -> CurveFunction:
        """l_t = e^{-at} p_0 = exp(-a(t + x))."""
        p0 = exponential(self.a, domain_end)
        return p0.scale(np.exp(-self.a * t))


def bump_combination(basis: BumpBasis, weights, order: int = 0) -> CurveFunction:
    """sum_i w_i d^order h_i; ``weights`` may carry a leading path axis."""
    w = np.asarray(weights, dtype=float)
    active = np.nonzero(np.any(w.reshape(-1, basis.count) != 0, axis=0))[0]
    support = normalize_intervals([basis[i + 1].support[0] for i in active], basis.domain_end)

    def value(x, order=order):
        x = np.asarray(x, dtype=float)
        out = np.zeros(w.shape[:-1] + x.shape)
        for i in active:
            h = basis[i + 1]
            vals = h(x) if order == 0 else h.derivative(order, x)
            out = out + w[..., i, None] * vals if w.ndim > 1 else out + w[i] * vals
        return out

    return CurveFunction(value, basis.domain_end, (), support)


@dataclass
class ClaimRepresentation:
    """X = mean + sum over steps of (x_t, dW^Q_t), defined on a path bundle.

    ``integrand(step)`` returns the (paths, N) integrand used on
    [t_step, t_step+1).
    """

    bundle: PathBundle
    mean: float
    integrand: Callable[[int], np.ndarray]
    _values: np.ndarray | None = field(default=None, repr=False)

    def value_path(self) -> np.ndarray:
        """E_Q[X | F_t] on every grid time, shape (paths, steps+1)."""
        if self._values is None:
            b = self.bundle
            vals = np.empty((b.n_paths, b.n_steps + 1))
            vals[:, 0] = self.mean
            for n in range(b.n_steps):
                vals[:, n + 1] = vals[:, n] + np.einsum("pi,pi->p", self.integrand(n), b.dW_Q[:, n])
            self._values = vals
        return self._values

    def conditional_value(self, step: int) -> np.ndarray:
        return self.value_path()[:, step]

    @property
    def value(self) -> np.ndarray:
        return self.value_path()[:, -1]

    def restrict(self, idx) -> "ClaimRepresentation":
        """The same claim on a subset of the bundle's paths."""
        idx = np.atleast_1d(np.arange(self.bundle.n_paths)[idx])
        sub = self.bundle.subset(idx)
        rep = ClaimRepresentation(sub, self.mean, lambda n: self.integrand(n)[idx])
        if self._values is not None:
            rep._values = self._values[idx]
        return rep


@dataclass
class Portfolio:
    """theta_t = b_t delta_0 + risky_t on each grid time and path.

    ``weights(step)`` gives the bump weights of the risky density before the
    factor p_0/p_t, so the risky element is (p_0/p_t) sum_i w_i (h_i - h_i'').
    """

    bundle: PathBundle
    b: np.ndarray
    weights: Callable[[int], np.ndarray]

    @property
    def spec(self) -> ModelSpec:
        return self.bundle.spec

    def risky_element(self, step: int) -> DualElement:
        spec = self.spec
        w = self.weights(step)
        comb = bump_combination(spec.basis, w)
        comb2 = bump_combination(spec.basis, w, order=2)
        bundle, a = self.bundle, spec.a

        def density(x):
            ratio = np.exp(-a * x) / bundle.curve_values(step, x)
            return ratio * (comb(x) - comb2(x))

        return DualElement(0.0, CurveFunction(density, spec.domain_end, (), comb.support))

    def element(self, step: int) -> DualElement:
        return DualElement(self.b[:, step], None) + self.risky_element(step)

    def risky_value_identity(self, step: int) -> np.ndarray:
        """pair(theta^1_t, p_t) through sum_i w_i lambda_i."""
        return self.weights(step) @ self.spec.lambdas

    def value(self, step: int) -> np.ndarray:
        return self.b[:, step] * self.bundle.curve_values(step, [0.0])[:, 0] + self.risky_value_identity(step)

    def numeric_pairings(self, step: int, quad: QuadratureSpec = DEFAULT_QUADRATURE):
        """(pair(theta_t, p_t), [pair(theta_t, p_t sigma_j)]_j) by quadrature.

        The delta_0 part contributes b_t p_t(0) to the value and nothing to the
        volatility pairings since every sigma_j vanishes at 0.
        """
        spec, bundle = self.spec, self.bundle
        risky = self.risky_element(step).regular_part
        value = self.b[:, step] * bundle.curve_values(step, [0.0])[:, 0]
        vol = np.zeros((bundle.n_paths, spec.N))
        for lo, hi in risky.support:
            x, w = quad.nodes(lo, hi)
            prod = risky(x) * bundle.curve_values(step, x)
            value = value + prod @ w
            for j, sig in enumerate(spec.sigma):
                s = sig(x)
                if np.any(s):
                    vol[:, j] += (prod * s) @ w
        return value, vol

    def write_csv(self, path, path_index: int = 0) -> None:
        """t, b_t, risky value, total value for one path."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "b", "risky_value", "total_value"])
            for n in range(self.bundle.n_steps + 1):
                risky = float(self.risky_value_identity(n)[path_index])
                total = float(self.value(n)[path_index])
                w.writerow([repr(n * self.bundle.dt), repr(float(self.b[path_index, n])), repr(risky), repr(total)])


def solve_hedge(claim: ClaimRepresentation) -> Portfolio:
    """Unique hedge of a claim with known integrand.

    The risky weights are x_t^i / k_i and b_t makes the portfolio value equal
    E_Q[X | F_t]. At the final time the last integrand is held over.
    """
    bundle = claim.bundle
    spec = bundle.spec
    k = spec.k_array
    n_steps = bundle.n_steps
    ops = DiagonalOperatorFamily.from_spec(spec)

    def weights(step: int) -> np.ndarray:
        x = claim.integrand(min(step, n_steps - 1))
        # S A^{-1/2} carries e^{at}; l_t / p_t carries e^{-at}
        return np.exp(-spec.a * step * bundle.dt) * ops.SA_inv_sqrt(step * bundle.dt, x)

    values = claim.value_path()
    b = np.empty_like(values)
    for n in range(n_steps + 1):
        risky = weights(n) @ spec.lambdas
        b[:, n] = (values[:, n] - risky) / bundle.curve_values(n, [0.0])[:, 0]
    return Portfolio(bundle, b, weights)


def bank_account(bundle: PathBundle) -> Portfolio:
    """theta_t = exp(int_0^t f_s(0) ds) delta_0 with a left Riemann sum."""
    r = short_rates(bundle)
    growth = np.zeros_like(r)
    np.cumsum(r[:, :-1] * bundle.dt, axis=1, out=growth[:, 1:])
    N = bundle.spec.N
    return Portfolio(bundle, np.exp(growth), lambda step: np.zeros((bundle.n_paths, N)))


def self_financing_residual(portfolio: Portfolio, numeric: bool = True,
                            quad: QuadratureSpec = DEFAULT_QUADRATURE) -> np.ndarray:
    """Per-path max over steps of |dV - pair(theta, p m) dt - sum_i pair(theta, p sigma_i) dW^P_i|.

    With ``numeric`` the pairings are evaluated by quadrature; otherwise the
    closed-form identities are used.
    """
    bundle = portfolio.bundle
    spec = bundle.spec
    mhat, dt = spec.mhat, bundle.dt

    def pairings(n):
        if numeric:
            return portfolio.numeric_pairings(n, quad)
        w = portfolio.weights(n)
        return portfolio.value(n), w * spec.k_array

    worst = np.zeros(bundle.n_paths)
    v_prev, vol_prev = pairings(0)
    for n in range(bundle.n_steps):
        v_next, vol_next = pairings(n + 1)
        drift_term = vol_prev @ mhat  # pair(theta, p m) with m = sum_i mhat_i sigma_i
        resid = v_next - v_prev - drift_term * dt - np.einsum("pi,pi->p", vol_prev, bundle.dW_P_step(n))
        worst = np.maximum(worst, np.abs(resid))
        v_prev, vol_prev = v_next, vol_next
    return worst


@dataclass
class AdmissibilityReport:
    norm: float
    half_sample_norm: float
    components: dict
    admissible: bool


def admissibility_norm(portfolio: Portfolio, time_stride: int = 32, riesz_step: float = 1.0 / 512.0,
                       divergence_ratio: float = 1.5) -> AdmissibilityReport:
    """Monte Carlo estimate of the admissible-portfolio norm.

    Sums E int (||theta_t||_{H'}^2 + ||sigma* theta_t p_t||^2) dt and
    E (int |pair(theta_t, p_t m)| dt)^2 on every ``time_stride``-th step. The
    estimate on the first half of the paths is compared with the full one; a
    ratio beyond ``divergence_ratio`` flags the portfolio as non-admissible.
    """
    bundle = portfolio.bundle
    spec = bundle.spec
    solver = RieszSolver(spec.domain_end, riesz_step)
    steps = list(range(0, bundle.n_steps, time_stride))
    h = time_stride * bundle.dt
    dual_sq = np.zeros(bundle.n_paths)
    vol_sq = np.zeros(bundle.n_paths)
    drift_int = np.zeros(bundle.n_paths)
    for n in steps:
        theta = portfolio.element(n)
        dual_sq += solver.dual_norm(theta) ** 2 * h
        _, vol = portfolio.numeric_pairings(n)
        vol_sq += np.sum(vol**2, axis=1) * h
        drift_int += np.abs(vol @ spec.mhat) * h
    per_path = dual_sq + vol_sq + drift_int**2
    full = float(np.sqrt(per_path.mean()))
    half = float(np.sqrt(per_path[: max(1, bundle.n_paths // 2)].mean()))
    ratio = max(full, half) / max(min(full, half), 1e-300) if full > 0 else 1.0
    comps = {"dual": float(dual_sq.mean()), "volatility": float(vol_sq.mean()),
             "drift": float((drift_int**2).mean())}
    return AdmissibilityReport(full, half, comps, bool(np.isfinite(full) and ratio <= divergence_ratio))


def perturb(portfolio: Portfolio, size: float, step: int) -> Portfolio:
    """A copy whose bank position at ``step`` is shifted so the value moves by ``size``."""
    if size == 0:
        raise DomainError("perturbation must be non-zero")
    b = portfolio.b.copy()
    b[:, step] += size / portfolio.bundle.curve_values(step, [0.0])[:, 0]
    return Portfolio(portfolio.bundle, b, portfolio.weights)
