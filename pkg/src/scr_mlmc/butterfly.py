"""Butterfly option under Black-Scholes with instantaneous spot shocks.

A closed-form test problem: X = S_t, and the inner draw simulates S_T given
S_t and reports the P&L impact of an up and a down spot shock on the
butterfly payoff. The interest rate is zero throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError, NumericalError
from .estimators import NestedProblem, max_aggregator


@dataclass(frozen=True)
class ButterflyParams:
    S0: float = 100.0
    sigma: float = 0.3
    K1: float = 50.0
    K2: float = 150.0
    T: float = 2.0
    t: float = 1.0
    s_up: float = 0.2
    s_down: float = -0.2

    def __post_init__(self):
        if not 0.0 < self.K1 < self.K2:
            raise ConfigError(f"need 0 < K1 < K2, got K1={self.K1}, K2={self.K2}")
        if not 0.0 < self.t < self.T:
            raise ConfigError(f"need 0 < t < T, got t={self.t}, T={self.T}")
        if self.S0 <= 0.0 or self.sigma <= 0.0:
            raise ConfigError("S0 and sigma must be positive")
        if self.s_up <= -1.0 or self.s_down <= -1.0:
            raise ConfigError("shocks must keep the spot positive")

    @property
    def K_mid(self) -> float:
        return 0.5 * (self.K1 + self.K2)


def call_bs(tau, s, K, sigma):
    """Zero-rate Black-Scholes call price; tau = 0 gives the payoff."""
    tau = np.asarray(tau, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(tau < 0) or np.any(s <= 0) or K <= 0 or sigma <= 0:
        raise ValueError("call_bs needs tau >= 0, s > 0, K > 0, sigma > 0")
    vol = sigma * np.sqrt(tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(s / K) + 0.5 * vol**2) / vol
        price = s * ndtr(d1) - K * ndtr(d1 - vol)
    out = np.where(vol > 0, price, np.maximum(s - K, 0.0))
    return out if out.ndim else float(out)


def payoff(s, params: ButterflyParams):
    s = np.asarray(s, dtype=float)
    out = (
        np.maximum(s - params.K1, 0.0)
        + np.maximum(s - params.K2, 0.0)
        - 2.0 * np.maximum(s - params.K_mid, 0.0)
    )
    return out if out.ndim else float(out)


def butterfly_price(tau, s, params: ButterflyParams):
    c = lambda K: call_bs(tau, s, K, params.sigma)  # noqa: E731
    out = np.asarray(c(params.K1) + c(params.K2) - 2.0 * c(params.K_mid))
    return out if out.ndim else float(out)


def conditional_means(x, params: ButterflyParams) -> np.ndarray:
    """Exact E[Y | S_t = x], shape (..., 3)."""
    tau = params.T - params.t
    base = butterfly_price(tau, x, params)
    up = base - butterfly_price(tau, (1.0 + params.s_up) * np.asarray(x), params)
    down = base - butterfly_price(tau, (1.0 + params.s_down) * np.asarray(x), params)
    return np.stack(np.broadcast_arrays(up, down, np.zeros_like(up)), axis=-1)


def _spot_at_t(z, params: ButterflyParams):
    vol = params.sigma * math.sqrt(params.t)
    return params.S0 * np.exp(vol * np.asarray(z) - 0.5 * vol**2)


def standardize(x, params: ButterflyParams):
    """Standard-normal coordinate of S_t = x, inverse of the outer sampler."""
    vol = params.sigma * math.sqrt(params.t)
    return (np.log(np.asarray(x) / params.S0) + 0.5 * vol**2) / vol


def toy_problem(params: ButterflyParams = ButterflyParams(), max_batch_draws: int = 1 << 20):
    """NestedProblem with X = S_t, P = 3 (third component 0), weight 1."""
    tau = params.T - params.t
    vol = params.sigma * math.sqrt(tau)

    def sample_outer(rngs):
        z = np.fromiter((r.standard_normal() for r in rngs), float, len(rngs))
        return _spot_at_t(z, params)

    def sample_inner(x, rngs, K):
        g = np.stack([r.standard_normal(K) for r in rngs]) if rngs else np.empty((0, K))
        sT = x[:, None] * np.exp(vol * g - 0.5 * vol**2)
        base = payoff(sT, params)
        y = np.empty(sT.shape + (3,))
        y[..., 0] = base - payoff((1.0 + params.s_up) * sT, params)
        y[..., 1] = base - payoff((1.0 + params.s_down) * sT, params)
        y[..., 2] = 0.0
        return y

    return NestedProblem(
        n_components=3,
        sample_outer=sample_outer,
        sample_inner=sample_inner,
        weight=lambda x: np.ones(len(x)),
        inner_cost_hint=1.0,
        max_batch_draws=max_batch_draws,
        label="butterfly",
    )


def exact_conditional(params: ButterflyParams):
    """Batch map X -> E[Y|X], usable as a bias reference."""
    return lambda x: conditional_means(x, params)


# --------------------------------------------------------------------------
# reference value by adaptive Gauss-Legendre quadrature

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)
_GL_NODES_C, _GL_WEIGHTS_C = np.polynomial.legendre.leggauss(10)


def _panel(f, a, b, nodes, weights):
    half = 0.5 * (b - a)
    return half * float(np.dot(weights, f(a + half * (nodes + 1.0))))


def adaptive_gauss_legendre(f, a: float, b: float, tol: float, max_depth: int = 50) -> float:
    """Integrate a vectorised f over [a, b] to absolute tolerance tol.

    Each panel compares a 10-point and a 20-point rule; panels that disagree
    are bisected with the tolerance split between halves.
    """
    total = 0.0
    stack = [(a, b, tol, 0)]
    while stack:
        lo, hi, eps, depth = stack.pop()
        fine = _panel(f, lo, hi, _GL_NODES, _GL_WEIGHTS)
        coarse = _panel(f, lo, hi, _GL_NODES_C, _GL_WEIGHTS_C)
        if abs(fine - coarse) <= eps or hi - lo < 1e-12:
            total += fine
        elif depth >= max_depth:
            raise NumericalError(f"quadrature did not converge on [{lo}, {hi}]")
        else:
            mid = 0.5 * (lo + hi)
            stack.append((lo, mid, 0.5 * eps, depth + 1))
            stack.append((mid, hi, 0.5 * eps, depth + 1))
    return total


def reference_value(params: ButterflyParams = ButterflyParams(), tol: float = 1e-10) -> float:
    """E[max(E[Y^1|X], E[Y^2|X], 0)] integrated on the standard-normal axis over [-8, 8]."""
    if tol <= 0:
        raise ConfigError("tolerance must be positive")
    agg = max_aggregator()

    def integrand(z):
        x = _spot_at_t(z, params)
        return agg(conditional_means(x, params)) * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)

    value = adaptive_gauss_legendre(integrand, -8.0, 8.0, tol)
    if not math.isfinite(value):
        raise NumericalError("non-finite reference value")
    return value
