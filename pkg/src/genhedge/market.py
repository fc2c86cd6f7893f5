"""Monte Carlo simulation of the discounted bond curve.

Each fixed-maturity discounted price is lognormal,

    P_t(T') = P_0(T') exp( sum_i int sigma_i(T'-s) dW^Q_i(s) - 1/2 sum_i int sigma_i(T'-s)^2 ds ),

so paths are stored as Brownian increments only and curves are evaluated on
demand at any time to maturity. Time integrals use left endpoints.
"""

from __future__ import annotations

import csv
import os
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .basis import HALF_WIDTH, ModelSpec
from .curves import CurveFunction
from .errors import DomainError, NumericError

_CHUNK = 2048  # abscissae per kernel table
_VALUE_CACHE_ELEMS = 1 << 24  # cached curve samples per bundle


def max_threads() -> int:
    try:
        return max(1, int(os.environ.get("GENHEDGE_THREADS", "1")))
    except ValueError:
        return 1


def path_normals(seed: int, path_id: int, n_steps: int, n_factors: int) -> np.ndarray:
    """Standard normals for one path from its own counter-based Philox stream."""
    if seed < 0 or path_id < 0:
        raise DomainError("seed and path id must be non-negative")
    key = (int(seed) << 64) | int(path_id)
    return np.random.Generator(np.random.Philox(key=key)).standard_normal((n_steps, n_factors))


@dataclass(eq=False)
class PathBundle:
    """A batch of simulated paths; leading axis of every array is the path.

    ``dW_Q`` holds the Q-Brownian increments whatever the simulation measure;
    the P increments differ by the market price of risk times dt.
    """

    spec: ModelSpec
    measure: str
    dW_Q: np.ndarray
    path_ids: np.ndarray
    _tables: OrderedDict = field(default_factory=OrderedDict, repr=False)
    _values: OrderedDict = field(default_factory=OrderedDict, repr=False)

    def __post_init__(self):
        if self.measure not in ("P", "Q"):
            raise DomainError("measure must be 'P' or 'Q'")
        e = self.spec.e
        zeta = np.zeros((self.n_paths, self.n_steps + 1))
        np.cumsum(self.dW_Q @ e, axis=1, out=zeta[:, 1:])
        self.zeta = zeta
        self.xi = girsanov_density(self.spec, self)

    @property
    def n_paths(self) -> int:
        return self.dW_Q.shape[0]

    @property
    def n_steps(self) -> int:
        return self.dW_Q.shape[1]

    @property
    def dt(self) -> float:
        return self.spec.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.spec.T, self.n_steps + 1)

    @property
    def dW_P(self) -> np.ndarray:
        """P-Brownian increments (a fresh array; prefer ``dW_P_step`` in loops)."""
        return self.dW_Q - self.spec.mhat * self.dt

    def dW_P_step(self, n: int) -> np.ndarray:
        return self.dW_Q[:, n] - self.spec.mhat * self.dt

    def subset(self, idx) -> "PathBundle":
        idx = np.atleast_1d(np.arange(self.n_paths)[idx])
        return PathBundle(self.spec, self.measure, self.dW_Q[idx], self.path_ids[idx])

    def coarsen(self, factor: int) -> "PathBundle":
        """Same Brownian paths sampled on a grid ``factor`` times coarser."""
        if self.n_steps % factor:
            raise DomainError("step count not divisible by factor")
        dW = self.dW_Q.reshape(self.n_paths, self.n_steps // factor, factor, -1).sum(axis=2)
        return PathBundle(self.spec, self.measure, dW, self.path_ids)

    # curve evaluation -----------------------------------------------------

    def _table(self, x: np.ndarray, order: int):
        key = (x.tobytes(), order)
        hit = self._tables.get(key)
        if hit is not None:
            self._tables.move_to_end(key)
            return hit
        spec = self.spec
        lo, hi = float(x.min()), float(x.max()) + spec.T
        active = [i for i in range(spec.N)
                  if (i + 1) + HALF_WIDTH > lo and (i + 1) - HALF_WIDTH < hi]
        shifts = x[None, :] + self.dt * np.arange(self.n_steps + 1)[:, None]
        vals = np.empty((self.n_steps + 1, len(active), x.size))
        drift = np.zeros((self.n_steps + 1, x.size))
        for col, i in enumerate(active):
            sig = spec.sigma[i]
            s0 = sig(shifts)
            if order == 0:
                vals[:, col] = s0
                drift += 0.5 * self.dt * s0 * s0
            else:
                s1 = sig.derivative(1, shifts)
                vals[:, col] = s1
                drift += self.dt * s0 * s1
        drift[0] = 0.0
        cum_drift = np.cumsum(drift, axis=0)
        table = (np.array(active, dtype=int), vals, cum_drift)
        self._tables[key] = table
        while len(self._tables) > 48:
            self._tables.popitem(last=False)
        return table

    def log_curve(self, step: int, x, order: int = 0) -> np.ndarray:
        """log p_t(x) (order 0) or its x-derivative (order 1) at grid step ``step``."""
        if not 0 <= step <= self.n_steps:
            raise DomainError(f"step {step} outside [0, {self.n_steps}]")
        x = np.ascontiguousarray(np.asarray(x, dtype=float))
        key = (step, order, x.shape, x.tobytes())
        hit = self._values.get(key)
        if hit is not None:
            self._values.move_to_end(key)
            return hit
        out = self._log_curve(step, x, order)
        if out.size <= _VALUE_CACHE_ELEMS // 8:
            self._values[key] = out
            out.setflags(write=False)
            while sum(v.size for v in self._values.values()) > _VALUE_CACHE_ELEMS:
                self._values.popitem(last=False)
        return out

    def _log_curve(self, step: int, x: np.ndarray, order: int) -> np.ndarray:
        flat = x.ravel()
        out = np.empty((self.n_paths, flat.size))
        t = step * self.dt
        for start in range(0, flat.size, _CHUNK):
            xs = flat[start:start + _CHUNK]
            active, vals, cum_drift = self._table(xs, order)
            base = -self.spec.a * (t + xs) if order == 0 else np.full(xs.size, -self.spec.a)
            if step == 0 or active.size == 0:
                out[:, start:start + xs.size] = base
                continue
            rev = self.dW_Q[:, step - 1::-1, :][:, :, active].reshape(self.n_paths, -1)
            kern = vals[1:step + 1].reshape(-1, xs.size)
            out[:, start:start + xs.size] = base + rev @ kern - cum_drift[step]
        return out.reshape((self.n_paths,) + x.shape)

    def curve_values(self, step: int, x) -> np.ndarray:
        vals = np.exp(self.log_curve(step, x))
        if not np.all(np.isfinite(vals)):
            raise NumericError("non-finite discounted bond price")
        return vals

    def curve(self, step: int) -> CurveFunction:
        """The discounted curve at ``step`` for every path, as a batch-valued curve."""
        return CurveFunction(
            lambda x: self.curve_values(step, x),
            self.spec.domain_end,
            (lambda x: self.curve_values(step, x) * self.log_curve(step, x, 1),),
            name=f"p_bar[{step}]",
        )

    def curves(self, maturities) -> np.ndarray:
        """p_t(x) for all steps on a (small) maturity grid: shape (paths, steps+1, len(x))."""
        x = np.asarray(maturities, dtype=float)
        return np.stack([self.curve_values(n, x) for n in range(self.n_steps + 1)], axis=1)

    def fixed_maturity_prices(self, step: int, maturities) -> np.ndarray:
        """P_t(T') for calendar maturities T' >= t_step."""
        T = np.asarray(maturities, dtype=float)
        x = T - step * self.dt
        if np.any(x < -1e-12):
            raise DomainError("maturity already passed")
        return self.curve_values(step, np.maximum(x, 0.0))


def simulate(spec: ModelSpec, measure: str = "Q", n_paths: int = 1000, path_offset: int = 0,
             n_steps: int | None = None) -> PathBundle:
    """Draw ``n_paths`` paths; path ``j`` always uses the stream keyed by (seed, j)."""
    if n_paths < 1:
        raise DomainError("need at least one path")
    n_steps = spec.time_steps if n_steps is None else n_steps
    dt = spec.T / n_steps
    ids = np.arange(path_offset, path_offset + n_paths)
    Z = np.empty((n_paths, n_steps, spec.N))

    def fill(block):
        for j in block:
            Z[j] = path_normals(spec.seed, int(ids[j]), n_steps, spec.N)

    blocks = np.array_split(np.arange(n_paths), max_threads())
    if len(blocks) == 1:
        fill(blocks[0])
    else:
        with ThreadPoolExecutor(len(blocks)) as pool:
            list(pool.map(fill, blocks))
    dW = np.sqrt(dt) * Z
    if measure == "P":
        dW += spec.mhat * dt  # dW^Q = dW^P + mhat dt
    return PathBundle(spec, measure, dW, ids)


def girsanov_density(spec: ModelSpec, bundle: PathBundle) -> np.ndarray:
    """xi_t = exp(-(mhat, W^P_t) - |mhat|^2 t / 2), the density of Q on F_t."""
    m = spec.mhat
    proj = np.zeros((bundle.n_paths, bundle.n_steps + 1))
    np.cumsum(bundle.dW_Q @ m - float(m @ m) * bundle.dt, axis=1, out=proj[:, 1:])
    return np.exp(-proj - 0.5 * float(m @ m) * bundle.times)


def forward_rate(bundle: PathBundle, step: int) -> CurveFunction:
    """f_t(x) = -d/dx log p_t(x)."""
    return CurveFunction(lambda x: -bundle.log_curve(step, x, 1), bundle.spec.domain_end,
                         name=f"f[{step}]")


def short_rates(bundle: PathBundle) -> np.ndarray:
    """f_t(0) on every step: shape (paths, steps+1)."""
    return np.stack([-bundle.log_curve(n, [0.0], 1)[:, 0] for n in range(bundle.n_steps + 1)], axis=1)


def sde_residual(bundle: PathBundle, maturities=None) -> np.ndarray:
    """Integrated residual of dp = (dp/dx + p m) dt + p sigma dW^P, per path.

    For each step n and maturity x the Ito sum of the right-hand side over
    steps < n is compared with p_n(x) - p_0(x); the result is the maximum of
    the difference relative to p_n(x).
    """
    spec = bundle.spec
    x = np.arange(0.0, spec.domain_end - spec.T + 1e-9, 1.0 / 16.0) if maturities is None else np.asarray(maturities, float)
    m = spec.drift(x)
    sig = np.stack([s(x) for s in spec.sigma])  # (N, G)
    p_prev = bundle.curve_values(0, x)
    dp_prev = p_prev * bundle.log_curve(0, x, 1)
    acc = np.zeros_like(p_prev)
    worst = np.zeros(bundle.n_paths)
    p0 = p_prev.copy()
    for n in range(1, bundle.n_steps + 1):
        acc += (dp_prev + p_prev * m) * bundle.dt + p_prev * (bundle.dW_P_step(n - 1) @ sig)
        p_n = bundle.curve_values(n, x)
        worst = np.maximum(worst, np.max(np.abs(p_n - p0 - acc) / p_n, axis=1))
        p_prev, dp_prev = p_n, p_n * bundle.log_curve(n, x, 1)
    return worst


def write_paths_csv(bundle: PathBundle, path, maturities, max_paths: int | None = None) -> None:
    """One row per (path, step): zeta, xi and curve samples at ``maturities``."""
    maturities = np.asarray(maturities, dtype=float)
    count = bundle.n_paths if max_paths is None else min(max_paths, bundle.n_paths)
    sub = bundle.subset(slice(0, count))
    curves = sub.curves(maturities)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "step", "t", "zeta", "xi"] + [f"p_bar_x{m:g}" for m in maturities])
        for p in range(count):
            for n in range(sub.n_steps + 1):
                w.writerow([int(sub.path_ids[p]), n, repr(float(n * sub.dt)), repr(float(sub.zeta[p, n])),
                            repr(float(sub.xi[p, n]))] + [repr(float(v)) for v in curves[p, n]])
