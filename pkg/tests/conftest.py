from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from genhedge.basis import build_model
from genhedge.lab import LimitScenario, tune_k_caps


def mollifier(u):
    """Reference bump exp(-1/(1-u^2)), written independently of the package."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


def mollifier_prime(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    ui = u[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ui**2)) * (-2.0 * ui / (1.0 - ui**2) ** 2)
    return out


def reference_amplitude():
    """1 / ||psi(4(x-1))||_{H^1} by adaptive quadrature."""
    sq = integrate.quad(lambda x: mollifier(4 * (x - 1)) ** 2 + 16 * mollifier_prime(4 * (x - 1)) ** 2,
                        0.75, 1.25, epsabs=0, epsrel=1e-13, limit=200)[0]
    return 1.0 / math.sqrt(sq)


def reference_bump(i):
    amp = reference_amplitude()
    return lambda x: amp * mollifier(4.0 * (np.asarray(x, dtype=float) - i))


def reference_lambda(i, a):
    """(1 - a^2) int h_i e^{-ax}: the H^1 product with e^{-ax} after integrating by parts."""
    h = reference_bump(i)
    val = integrate.quad(lambda x: float(h(x)) * math.exp(-a * x), i - 0.25, i + 0.25,
                         epsabs=0, epsrel=1e-13, limit=200)[0]
    return (1.0 - a * a) * val


@pytest.fixture(scope="session")
def spec():
    """The untuned default market: a = 1/2, N = 12, T = 1, 512 steps."""
    return build_model()


@pytest.fixture(scope="session")
def tuned_spec(spec):
    """k caps tuned for C in {-inf, 0, +inf} with geometric decay 0.3 (log utility, y = 1)."""
    x0, alpha0 = 1.0, 1.0 / spec.c
    scen = [LimitScenario(-math.inf), LimitScenario(0.0), LimitScenario(math.inf)]
    return tune_k_caps(spec, scen, x0, alpha0, decay=0.3)


@pytest.fixture(scope="session")
def small_spec():
    """A short, coarse market for fast structural tests."""
    return build_model(N=6, time_steps=64)
