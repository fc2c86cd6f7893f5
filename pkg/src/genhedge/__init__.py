"""Generalized hedging portfolios in a Musiela-parametrized bond market.

The package builds a truncated factor model of discounted bond curves,
simulates it, hedges claims with bond portfolios, and constructs sequences
of hedges whose limits have an unbounded risky part.
"""

from __future__ import annotations

from .basis import ModelSpec, build_model, check_uniform_condition, select_a, select_k
from .claims import OptimalClaim, bounded_smooth_claim, log_utility, power_utility
from .curves import CurveFunction, DualElement, canonical_iso, h_norm, inner_h, pair, translate
from .errors import (
    CertificateFailure,
    ConfigurationError,
    DomainError,
    GenHedgeError,
    InvariantError,
    KScheduleRefinementRequired,
    NumericError,
)
from .hedging import Portfolio, self_financing_residual, solve_hedge
from .lab import LimitScenario, paradox_report, prescribe_limit
from .market import PathBundle, simulate

__version__ = "0.1.0"

__all__ = [
    "CertificateFailure",
    "ConfigurationError",
    "CurveFunction",
    "DomainError",
    "DualElement",
    "GenHedgeError",
    "InvariantError",
    "KScheduleRefinementRequired",
    "LimitScenario",
    "ModelSpec",
    "NumericError",
    "OptimalClaim",
    "PathBundle",
    "Portfolio",
    "bounded_smooth_claim",
    "build_model",
    "canonical_iso",
    "check_uniform_condition",
    "h_norm",
    "inner_h",
    "log_utility",
    "pair",
    "paradox_report",
    "power_utility",
    "prescribe_limit",
    "select_a",
    "select_k",
    "self_financing_residual",
    "simulate",
    "solve_hedge",
    "translate",
]
