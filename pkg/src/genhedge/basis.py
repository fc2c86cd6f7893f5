"""Bump basis, volatility scales and the frozen market specification.

The market is fixed by an initial discounted curve exp(-a x), a family of
disjointly supported C-infinity bumps h_i centred at the integers, scale
factors k_i and the volatilities sigma_i = k_i h_i exp(a x).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .curves import DEFAULT_QUADRATURE, CurveFunction, exponential, inner_h, QuadratureSpec
from .errors import ConfigurationError, DomainError, InvariantError

HALF_WIDTH = 0.25  # bump i lives on [i - 1/4, i + 1/4]
_EXP_CUTOFF = 1.0 / 700.0  # exp(-1/q) underflows below this q


def _mollifier(u: np.ndarray, order: int = 0) -> np.ndarray:
    """psi(u) = exp(-1/(1-u^2)) on |u| < 1 and its first two derivatives."""
    u = np.asarray(u, dtype=float)
    q = 1.0 - u * u
    inside = q > _EXP_CUTOFF
    out = np.zeros_like(u)
    qi, ui = q[inside], u[inside]
    psi = np.exp(-1.0 / qi)
    if order == 0:
        out[inside] = psi
    elif order == 1:
        out[inside] = psi * (-2.0 * ui / qi**2)
    elif order == 2:
        g1 = -2.0 * ui / qi**2
        g2 = -(2.0 * qi + 8.0 * ui**2) / qi**3
        out[inside] = psi * (g1 * g1 + g2)
    else:
        raise DomainError("mollifier derivatives available up to order 2")
    return out


@functools.lru_cache(maxsize=None)
def _bump_amplitude() -> float:
    # ||psi(4(x-1))||_{H^1}; the rule is fine enough that halving the panels
    # changes nothing at double precision.
    quad = QuadratureSpec(points=16, panel_width=1.0 / 256.0)
    x, w = quad.nodes(1.0 - HALF_WIDTH, 1.0 + HALF_WIDTH)
    u = 4.0 * (x - 1.0)
    sq = _mollifier(u) ** 2 + 16.0 * _mollifier(u, 1) ** 2
    return 1.0 / math.sqrt(float(sq @ w))


def bump(i: int, domain_end: float) -> CurveFunction:
    """The i-th basis bump: h_1 translated by i - 1."""
    amp = _bump_amplitude()
    c = float(i)
    return CurveFunction(
        lambda x: amp * _mollifier(4.0 * (x - c)),
        domain_end,
        (
            lambda x: 4.0 * amp * _mollifier(4.0 * (x - c), 1),
            lambda x: 16.0 * amp * _mollifier(4.0 * (x - c), 2),
        ),
        ((c - HALF_WIDTH, c + HALF_WIDTH),),
        name=f"h{i}",
    )


@dataclass(frozen=True)
class BumpBasis:
    count: int
    domain_end: float
    bumps: tuple[CurveFunction, ...] = field(repr=False)

    def __getitem__(self, i: int) -> CurveFunction:
        """1-based access: ``basis[1]`` is h_1."""
        if not 1 <= i <= self.count:
            raise IndexError(i)
        return self.bumps[i - 1]

    def gram(self, order: int = 1, quad: QuadratureSpec = DEFAULT_QUADRATURE) -> np.ndarray:
        g = np.empty((self.count, self.count))
        for i in range(self.count):
            for j in range(i, self.count):
                g[i, j] = g[j, i] = inner_h(self.bumps[i], self.bumps[j], order, quad)
        return g


def build_bumps(N: int, domain_end: float | None = None) -> BumpBasis:
    """Orthonormal (in H^1) bumps h_1..h_N on [0, N + 2]."""
    if N < 1:
        raise DomainError("need at least one bump")
    end = float(N + 2) if domain_end is None else float(domain_end)
    if end < N + HALF_WIDTH:
        raise DomainError("domain too short for the requested bumps")
    return BumpBasis(N, end, tuple(bump(i, end) for i in range(1, N + 1)))


def lam(i: int, a: float, domain_end: float | None = None,
        quad: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """(h_i, exp(-a .))_{H^1}, the H^1 projection of the initial curve on h_i."""
    end = float(i + 2) if domain_end is None else domain_end
    return float(inner_h(bump(i, end), exponential(a, end), 1, quad))


def lambdas(N: int, a: float, quad: QuadratureSpec = DEFAULT_QUADRATURE) -> np.ndarray:
    return np.array([lam(i, a, quad=quad) for i in range(1, N + 1)])


def check_a(a: float, N: int, floor: float = 1e-6) -> None:
    """Raise :class:`ConfigurationError` unless |lambda_i(a)| >= floor e^{-a(i-1)} for i <= N."""
    if a <= 0:
        raise ConfigurationError(f"initial-curve decay a={a} must be positive")
    lam_values = lambdas(N, a)
    bound = floor * np.exp(-a * np.arange(N))
    bad = np.nonzero(np.abs(lam_values) < bound)[0]
    if bad.size:
        raise ConfigurationError(
            f"a={a} makes lambda_{bad[0] + 1} = {lam_values[bad[0]]:.3e} vanish (floor {floor:g})"
        )


def select_a(N: int, floor: float = 1e-6, start: float = 0.5, step: float = 0.05,
             a_max: float = 4.0) -> float:
    """First admissible a scanning down from ``start`` (away from the zero at 1), then up."""
    if floor <= 0:
        raise DomainError("floor must be positive")
    down = [start - j * step for j in range(int(start / step) + 1) if start - j * step > 1e-9]
    up = [start + j * step for j in range(1, int((a_max - start) / step) + 1)]
    for a in down + up:
        try:
            check_a(a, N, floor)
        except ConfigurationError:
            continue
        return float(a)
    raise ConfigurationError(f"no a in (0, {a_max}] keeps every |lambda_i| above {floor:g}")


def weighted_h2_norms(basis: BumpBasis, a: float, quad: QuadratureSpec = DEFAULT_QUADRATURE) -> np.ndarray:
    """||h_i / p0||^2_{H^2} with p0 = exp(-a x)."""
    growth = exponential(-a, basis.domain_end)
    return np.array([inner_h(h * growth, h * growth, 2, quad) for h in basis.bumps])


def select_k(basis: BumpBasis, a: float, extra_caps: Sequence[float] | None = None,
             lam_values: np.ndarray | None = None, h2: np.ndarray | None = None) -> np.ndarray:
    """k_i = sgn(lambda_i) min(|lambda_i|, (1+||h_i/p0||^2_{H^2})^{-1/2}, cap_i) / i^2."""
    N = basis.count
    lam_values = lambdas(N, a) if lam_values is None else np.asarray(lam_values)
    h2 = weighted_h2_norms(basis, a) if h2 is None else np.asarray(h2)
    caps = np.full(N, np.inf) if extra_caps is None else np.asarray(extra_caps, dtype=float)
    if caps.shape != (N,):
        raise DomainError(f"expected {N} caps, got {caps.shape}")
    if np.any(caps <= 0):
        raise DomainError("caps must be positive")
    if np.any(lam_values == 0):
        raise ConfigurationError("some lambda_i vanishes; choose another a")
    i = np.arange(1, N + 1)
    bound = np.minimum(np.minimum(np.abs(lam_values), 1.0 / np.sqrt(1.0 + h2)), caps)
    size = bound / i**2
    # step down by an ulp where rounding would put |k_i| i^2 above the bound
    over = size * i**2 > bound
    size[over] = np.nextafter(size[over], 0.0)
    return np.sign(lam_values) * size


def build_sigma(basis: BumpBasis, k: Sequence[float], a: float) -> list[CurveFunction]:
    """sigma_i = k_i h_i exp(a x)."""
    growth = exponential(-a, basis.domain_end)
    return [(h * growth).scale(float(ki)) for h, ki in zip(basis.bumps, k)]


def market_price_of_risk(N: int) -> np.ndarray:
    """1/i on odd indices, 0 on even ones."""
    i = np.arange(1, N + 1)
    return np.where(i % 2 == 1, 1.0 / i, 0.0)


def drift(sigma: Sequence[CurveFunction], mhat: Sequence[float]) -> CurveFunction:
    terms = [s.scale(float(m)) for s, m in zip(sigma, mhat) if m != 0]
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def q_schedule(k: Sequence[float]) -> np.ndarray:
    """Running max of (1, 1/|k_i|): nondecreasing, q_i |k_i| >= 1 (infinite where k_i = 0)."""
    size = np.abs(np.asarray(k, dtype=float))
    inv = np.divide(1.0, size, out=np.full_like(size, np.inf), where=size > 0)
    return np.maximum.accumulate(np.maximum(1.0, inv))


@dataclass(frozen=True)
class ModelSpec:
    """Frozen market. Indices in the arrays are 0-based for factor i = index + 1."""

    a: float
    N: int
    k: tuple[float, ...]
    T: float = 1.0
    time_steps: int = 512
    seed: int = 42
    s: float = 1.0
    q: tuple[float, ...] | None = None
    k_cond: float | None = None
    extra_caps: tuple[float, ...] | None = None
    a_floor: float = 1e-6

    def __post_init__(self):
        if len(self.k) != self.N:
            raise ConfigurationError("k must have N entries")
        if self.q is None:
            object.__setattr__(self, "q", tuple(q_schedule(self.k)))
        if self.k_cond is None:
            object.__setattr__(self, "k_cond", math.exp(self.a * self.T))

    @property
    def domain_end(self) -> float:
        return float(self.N + 2)

    @property
    def dt(self) -> float:
        return self.T / self.time_steps

    @functools.cached_property
    def basis(self) -> BumpBasis:
        return build_bumps(self.N, self.domain_end)

    @functools.cached_property
    def k_array(self) -> np.ndarray:
        return np.asarray(self.k, dtype=float)

    @functools.cached_property
    def sigma(self) -> list[CurveFunction]:
        return build_sigma(self.basis, self.k, self.a)

    @functools.cached_property
    def lambdas(self) -> np.ndarray:
        return lambdas(self.N, self.a)

    @functools.cached_property
    def h2_norms(self) -> np.ndarray:
        return weighted_h2_norms(self.basis, self.a)

    @functools.cached_property
    def mhat(self) -> np.ndarray:
        return market_price_of_risk(self.N)

    @functools.cached_property
    def drift(self) -> CurveFunction:
        return drift(self.sigma, self.mhat)

    @property
    def c(self) -> float:
        """1 / ||mhat||, using the truncation at N."""
        return 1.0 / float(np.linalg.norm(self.mhat))

    @property
    def e(self) -> np.ndarray:
        return self.c * self.mhat

    @functools.cached_property
    def p0(self) -> CurveFunction:
        return exponential(self.a, self.domain_end)

    def summability(self) -> float:
        i = np.arange(1, self.N + 1)
        return float(np.sum(i**2 * self.k_array**2 * (1.0 + self.h2_norms)))

    def validate(self) -> None:
        """Check sign coherence, the scale caps and summability; raise InvariantError."""
        lam_values = self.lambdas
        if np.any(np.sign(self.k_array) != np.sign(lam_values)):
            bad = int(np.nonzero(np.sign(self.k_array) != np.sign(lam_values))[0][0])
            raise InvariantError(f"sgn k_{bad + 1} differs from sgn lambda_{bad + 1}", witness=bad + 1)
        i = np.arange(1, self.N + 1)
        cap = np.minimum(np.abs(lam_values), 1.0 / np.sqrt(1.0 + self.h2_norms))
        over = np.abs(self.k_array) * i**2 > cap * (1 + 1e-12)
        if np.any(over):
            raise InvariantError("|k_i| i^2 exceeds its cap", witness=int(np.nonzero(over)[0][0]) + 1)
        if self.summability() > math.pi**2 / 6:
            raise InvariantError("sum i^2 k_i^2 (1 + ||h_i/p0||^2) exceeds pi^2/6")

    def with_k(self, k: Sequence[float], extra_caps: Sequence[float] | None = None) -> "ModelSpec":
        caps = tuple(float(c) for c in extra_caps) if extra_caps is not None else self.extra_caps
        return replace(self, k=tuple(float(x) for x in k), q=None, extra_caps=caps)

    def to_dict(self) -> dict:
        return {
            "a": self.a, "N": self.N, "T": self.T, "time_steps": self.time_steps,
            "seed": self.seed, "s": self.s, "k_cond": self.k_cond, "a_floor": self.a_floor,
            "k": list(self.k), "q": list(self.q),
            "extra_caps": None if self.extra_caps is None else list(self.extra_caps),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            a=float(d["a"]), N=int(d["N"]), k=tuple(d["k"]), T=float(d["T"]),
            time_steps=int(d["time_steps"]), seed=int(d["seed"]), s=float(d["s"]),
            q=tuple(d["q"]), k_cond=float(d["k_cond"]), a_floor=float(d.get("a_floor", 1e-6)),
            extra_caps=None if d.get("extra_caps") is None else tuple(d["extra_caps"]),
        )


def build_model(a: float | None = 0.5, N: int = 12, T: float = 1.0, time_steps: int = 512,
                seed: int = 42, extra_caps: Sequence[float] | None = None,
                a_floor: float = 1e-6) -> ModelSpec:
    """Assemble a validated :class:`ModelSpec`. ``a=None`` searches for one."""
    if a is None:
        a = select_a(N, a_floor)
    else:
        check_a(a, N, a_floor)
    basis = build_bumps(N)
    k = select_k(basis, a, extra_caps)
    spec = ModelSpec(
        a=float(a), N=N, k=tuple(float(x) for x in k), T=T, time_steps=time_steps, seed=seed,
        extra_caps=None if extra_caps is None else tuple(float(c) for c in extra_caps),
        a_floor=a_floor,
    )
    spec.validate()
    return spec


@dataclass(frozen=True)
class UniformConditionReport:
    passed: bool
    min_slack: float
    witness: tuple[np.ndarray, float] | None = None


def check_uniform_condition(spec: ModelSpec, rng: np.random.Generator | None = None,
                            n_vectors: int = 100, times: Sequence[float] | None = None,
                            q: Sequence[float] | None = None, strict: bool = False) -> UniformConditionReport:
    """Test ||x|| <= k_cond ||A_t^{1/2} x||_{l^{s,2}} on random x and grid times.

    The slack is the ratio right/left; the condition holds when it is >= 1.
    ``q`` overrides the weights stored on the model (used for negative controls).
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    times = np.linspace(0.0, spec.T, spec.time_steps + 1) if times is None else np.asarray(times)
    qq = np.asarray(spec.q if q is None else q, dtype=float)
    x = rng.standard_normal((n_vectors, spec.N))
    x = np.vstack([x, np.eye(spec.N)])
    lhs = np.linalg.norm(x, axis=1)
    weighted = np.linalg.norm(qq**spec.s * np.abs(spec.k_array) * x, axis=1)
    slack = spec.k_cond * np.exp(-spec.a * times)[:, None] * weighted[None, :] / lhs[None, :]
    worst = np.unravel_index(np.argmin(slack), slack.shape)
    min_slack = float(slack[worst])
    passed = min_slack >= 1.0 - 1e-12
    witness = None if passed else (x[worst[1]], float(times[worst[0]]))
    if strict and not passed:
        raise InvariantError(f"uniform condition fails with slack {min_slack:.3e}", witness=witness)
    return UniformConditionReport(passed, min_slack, witness)
