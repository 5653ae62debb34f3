"""Black-Scholes equity and Vasicek++ short rate, sampled exactly on a yearly grid.

Under the pricing measure Q,

    dS/S = r dt + sigma_S dW,   r = x + phi(t),
    dx = k (theta - x) dt + sigma_r (gamma dW + sqrt(1 - gamma^2) dZ),

and the real measure P has density L_t = exp(lW W_t + lZ Z_t - (lW^2 + lZ^2) t / 2)
with respect to Q. The shift phi is piecewise constant on [j, j+1); rate
shocks are carried entirely by extra shift increments.

All path arrays carry arbitrary leading batch dimensions and a trailing time
axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class ShiftCurve:
    """phi(u) = values[j] for u in [j, j+1), and ``tail`` beyond the table."""

    values: tuple[float, ...] = ()
    tail: float = 0.0

    def value(self, u: float) -> float:
        j = int(math.floor(u))
        return self.values[j] if 0 <= j < len(self.values) else self.tail

    def annual(self, start: int, count: int) -> np.ndarray:
        """values on [start+j, start+j+1) for j < count."""
        out = np.full(count, self.tail, dtype=float)
        lo, hi = start, min(start + count, len(self.values))
        if hi > lo:
            out[: hi - lo] = self.values[lo:hi]
        return out

    def integral(self, a: int, b: int) -> float:
        """int_a^b phi(u) du for integer 0 <= a <= b."""
        return float(np.sum(self.annual(a, b - a)))

    @classmethod
    def from_zero_curve(cls, zero_rates, params: "MarketParams") -> "ShiftCurve":
        """Shift reproducing the zero rates z_1..z_M at time 0 from x_0."""
        z = np.asarray(zero_rates, dtype=float)
        i = np.arange(1, z.size + 1)
        b, log_a = _vasicek_ab(i, params.k, params.theta, params.sigma_r)
        cum = z * i + log_a - b * params.x0
        inc = np.diff(np.concatenate([[0.0], cum]))
        return cls(tuple(float(v) for v in inc), float(inc[-1]))


@dataclass(frozen=True)
class MarketParams:
    S0: float = 1.0
    sigma_S: float = 0.1
    x0: float = 0.02
    k: float = 0.2
    theta: float = 0.02
    sigma_r: float = 0.01
    gamma: float = 0.0
    lambda_W: float = 0.0
    lambda_Z: float = 0.0
    shift: ShiftCurve = field(default_factory=ShiftCurve)

    def __post_init__(self):
        if self.k <= 0:
            raise ConfigError(f"k must be positive, got {self.k}")
        if self.sigma_S < 0 or self.sigma_r < 0:
            raise ConfigError("volatilities must be non-negative")
        if abs(self.gamma) > 1:
            raise ConfigError(f"|gamma| must be <= 1, got {self.gamma}")
        if self.S0 <= 0:
            raise ConfigError("S0 must be positive")

    @property
    def r0(self) -> float:
        return self.x0 + self.shift.value(0.0)

    def bumped(self, **changes) -> "MarketParams":
        return replace(self, **changes)


def _triple_coeffs(k: float, gamma: float) -> tuple[float, float, float]:
    e = (1.0 - math.exp(-k)) / k
    a = gamma * e
    b = math.sqrt(max(1.0 - gamma * gamma, 0.0)) * e
    c = math.sqrt(max((1.0 - math.exp(-2.0 * k)) / (2.0 * k) - e * e, 0.0))
    return a, b, c


def triple_covariance(k: float, gamma: float) -> np.ndarray:
    a, b, c = _triple_coeffs(k, gamma)
    return np.array([[1.0, 0.0, a], [0.0, 1.0, b], [a, b, a * a + b * b + c * c]])


def triple_from_normals(g: np.ndarray, k: float, gamma: float):
    """Map i.i.d. normals (..., 3) to (dW, dZ, int_{t-1}^t e^{-k(t-u)} dB_u)."""
    a, b, c = _triple_coeffs(k, gamma)
    g = np.asarray(g, dtype=float)
    return g[..., 0], g[..., 1], a * g[..., 0] + b * g[..., 1] + c * g[..., 2]


def gaussian_triple(rng: np.random.Generator, k: float, gamma: float, size=None):
    """Exact draw of the one-year increments (dW, dZ, I_OU)."""
    shape = (3,) if size is None else tuple(np.atleast_1d(size)) + (3,)
    dw, dz, i_ou = triple_from_normals(rng.standard_normal(shape), k, gamma)
    return dw, dz, i_ou


@dataclass
class MarketState:
    """State at an integer date; arrays share a batch shape."""

    t: int
    S: np.ndarray
    x: np.ndarray
    L: np.ndarray


def step_exact(state: MarketState, params: MarketParams, triple, extra_shift=0.0) -> tuple[MarketState, np.ndarray]:
    """One exact yearly step; returns the new state and int_{t-1}^t x du.

    ``extra_shift`` is an additional shift value on [t-1, t), e.g. a shock.
    """
    dw, dz, i_ou = triple
    k, th, sr, g = params.k, params.theta, params.sigma_r, params.gamma
    ek = math.exp(-k)
    x_new = state.x * ek + th * (1.0 - ek) + sr * i_ou
    int_x = (state.x - x_new) / k + th + sr / k * (g * dw + math.sqrt(1.0 - g * g) * dz)
    int_phi = params.shift.value(state.t) + extra_shift
    s_new = state.S * np.exp(int_x + int_phi + params.sigma_S * dw - 0.5 * params.sigma_S**2)
    lw, lz = params.lambda_W, params.lambda_Z
    l_new = state.L * np.exp(lw * dw + lz * dz - 0.5 * (lw * lw + lz * lz))
    return MarketState(state.t + 1, s_new, x_new, l_new), int_x


@dataclass
class MarketScenario:
    """Yearly path from ``t0`` to ``t0 + years``; time is the last axis.

    ``int_r[..., j]`` is int r over [t0+j-1, t0+j] (0 at j = 0) and
    ``disc[..., j] = exp(-int_{t0}^{t0+j} r)``.
    """

    t0: int
    S: np.ndarray
    x: np.ndarray
    r: np.ndarray
    L: np.ndarray
    int_r: np.ndarray
    seed: int | None = None

    @property
    def years(self) -> int:
        return self.S.shape[-1] - 1

    @property
    def disc(self) -> np.ndarray:
        return np.exp(-np.cumsum(self.int_r, axis=-1))

    def at(self, j: int) -> MarketState:
        return MarketState(self.t0 + j, self.S[..., j], self.x[..., j], self.L[..., j])


def simulate_paths(
    params: MarketParams,
    normals: np.ndarray,
    start: MarketState | None = None,
    seed: int | None = None,
) -> MarketScenario:
    """Exact yearly path driven by i.i.d. normals of shape (..., years, 3)."""
    normals = np.asarray(normals, dtype=float)
    batch, years = normals.shape[:-2], normals.shape[-2]
    if start is None:
        start = MarketState(0, np.full(batch, params.S0), np.full(batch, params.x0), np.ones(batch))
    state = MarketState(
        start.t,
        np.broadcast_to(start.S, batch).astype(float),
        np.broadcast_to(start.x, batch).astype(float),
        np.broadcast_to(start.L, batch).astype(float),
    )
    shape = batch + (years + 1,)
    S, x, L, int_r = np.empty(shape), np.empty(shape), np.empty(shape), np.zeros(shape)
    S[..., 0], x[..., 0], L[..., 0] = state.S, state.x, state.L
    for j in range(years):
        triple = triple_from_normals(normals[..., j, :], params.k, params.gamma)
        phi = params.shift.value(state.t)
        state, int_x = step_exact(state, params, triple)
        S[..., j + 1], x[..., j + 1], L[..., j + 1] = state.S, state.x, state.L
        int_r[..., j + 1] = int_x + phi
    phi_now = np.array([params.shift.value(start.t + j) for j in range(years + 1)])
    return MarketScenario(start.t, S, x, x + phi_now, L, int_r, seed)


# --------------------------------------------------------------------------
# pricing


def _vasicek_ab(i, k: float, theta: float, sigma_r: float):
    i = np.asarray(i, dtype=float)
    b = (1.0 - np.exp(-k * i)) / k
    log_a = (theta - sigma_r**2 / (2.0 * k * k)) * (b - i) - sigma_r**2 * b * b / (4.0 * k)
    return b, log_a


def zc_price(t: int, i: int, x_t, params: MarketParams):
    """P(t, t+i) = exp(-int_t^{t+i} phi) A(i) exp(-B(i) x_t) for integer i >= 0."""
    if i < 0:
        raise ValueError("maturity must be non-negative")
    b, log_a = _vasicek_ab(i, params.k, params.theta, params.sigma_r)
    out = np.exp(log_a - params.shift.integral(t, t + i) - b * np.asarray(x_t, dtype=float))
    return out if np.ndim(out) else float(out)


def zc_curve(t: int, n: int, x_t, params: MarketParams, extra_cum=None) -> np.ndarray:
    """Prices P(t, t+i), i = 1..n, shape x_t.shape + (n,).

    ``extra_cum[..., i-1]`` is int_t^{t+i} of an extra shift (shocks).
    """
    i = np.arange(1, n + 1)
    b, log_a = _vasicek_ab(i, params.k, params.theta, params.sigma_r)
    int_phi = np.cumsum(params.shift.annual(t, n))
    expo = log_a - int_phi - b * np.asarray(x_t, dtype=float)[..., None]
    if extra_cum is not None:
        expo = expo - extra_cum
    return np.exp(expo)


def swap_rate(zc) -> np.ndarray:
    """Par coupon (1 - P_n) / sum P_i over the last axis of ``zc``."""
    zc = np.asarray(zc, dtype=float)
    if np.any(zc <= 0):
        raise ValueError("zero-coupon prices must be positive")
    annuity = zc.sum(axis=-1)
    if np.any(annuity == 0):
        raise ZeroDivisionError("zero annuity")
    out = (1.0 - zc[..., -1]) / annuity
    return out if out.ndim else float(out)


def swap_rates(zc) -> np.ndarray:
    """Par coupons for every maturity 1..n at once, shape of ``zc``."""
    zc = np.asarray(zc, dtype=float)
    return (1.0 - zc) / np.cumsum(zc, axis=-1)


def bond_value(c, zc) -> np.ndarray:
    """B = c sum_{i<=n} P_i + P_n for a maturity-n bond, n = zc.shape[-1]."""
    zc = np.asarray(zc, dtype=float)
    out = np.asarray(c) * zc.sum(axis=-1) + zc[..., -1]
    return out if np.ndim(out) else float(out)


def bond_values(coupons, zc) -> np.ndarray:
    """Values B(t, i, coupons[i-1]) for every maturity i = 1..m (last axis)."""
    zc = np.asarray(zc, dtype=float)
    coupons = np.asarray(coupons, dtype=float)
    if coupons.shape[-1] != zc.shape[-1]:
        raise ValueError("coupon ladder and curve lengths differ")
    return coupons * np.cumsum(zc, axis=-1) + zc


def portfolio_value(coupons, zc) -> np.ndarray:
    """Equally weighted ladder (1/n) sum_i B(t, i, c^i)."""
    coupons = np.asarray(coupons, dtype=float)
    zc = np.asarray(zc, dtype=float)
    if coupons.shape[-1] != zc.shape[-1]:
        raise ValueError("coupon ladder and curve lengths differ")
    out = bond_values(coupons, zc).mean(axis=-1)
    return out if np.ndim(out) else float(out)


# --------------------------------------------------------------------------
# rate shocks

# Relative shocks by maturity (years 1..20 and 90, interpolated in between).
_EIOPA_MATURITIES = tuple(range(1, 21)) + (90,)
_EIOPA_UP = (
    0.70, 0.70, 0.64, 0.59, 0.55, 0.52, 0.49, 0.47, 0.44, 0.42,
    0.39, 0.37, 0.35, 0.34, 0.33, 0.31, 0.30, 0.29, 0.27, 0.26, 0.20,
)
_EIOPA_DOWN = (
    -0.75, -0.65, -0.56, -0.50, -0.46, -0.42, -0.39, -0.36, -0.33, -0.31,
    -0.30, -0.29, -0.28, -0.28, -0.27, -0.28, -0.28, -0.28, -0.29, -0.29, -0.20,
)


@dataclass(frozen=True)
class RateShock:
    """Relative zero-rate multipliers by maturity.

    Up: z -> z (1 + |m_up|). Down: z -> z (1 - |m_down|). Maturities between
    table entries are linearly interpolated, beyond the last entry held flat.
    """

    maturities: tuple[int, ...] = _EIOPA_MATURITIES
    up: tuple[float, ...] = _EIOPA_UP
    down: tuple[float, ...] = _EIOPA_DOWN
    scale: float = 1.0

    def __post_init__(self):
        if not self.maturities:
            raise ConfigError("empty shock table")
        if not (len(self.maturities) == len(self.up) == len(self.down)):
            raise ConfigError("shock table columns have different lengths")
        if self.maturities[0] != 1 or any(
            b <= a for a, b in zip(self.maturities, self.maturities[1:])
        ):
            raise ConfigError("shock maturities must start at 1 and increase")

    def multipliers(self, direction: str, n: int) -> np.ndarray:
        """Signed relative shocks m_1..m_n so that z -> z (1 + m)."""
        if direction == "up":
            col = np.abs(self.up)
        elif direction == "down":
            col = -np.abs(self.down)
        else:
            raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")
        return self.scale * np.interp(np.arange(1, n + 1), self.maturities, col)

    @classmethod
    def uniform(cls, up: float, down: float | None = None) -> "RateShock":
        return cls((1,), (up,), (up if down is None else down,))

    @classmethod
    def zero(cls) -> "RateShock":
        return cls.uniform(0.0)


def load_shock_table(path: str | Path) -> RateShock:
    """Read 'maturity up_multiplier down_multiplier' lines; '#' starts a comment."""
    mats, up, down = [], [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ConfigError(f"{path}:{lineno}: expected 3 columns, got {len(parts)}")
        try:
            mats.append(int(parts[0]))
            up.append(float(parts[1]))
            down.append(float(parts[2]))
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return RateShock(tuple(mats), tuple(up), tuple(down))


def zero_rates(zc: np.ndarray) -> np.ndarray:
    """z_i = -log P(t, t+i) / i over the last axis."""
    zc = np.asarray(zc, dtype=float)
    return -np.log(zc) / np.arange(1, zc.shape[-1] + 1)


def shocked_zero_rates(z: np.ndarray, shock: RateShock, direction: str) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return z * (1.0 + shock.multipliers(direction, z.shape[-1]))


def shift_increments(z: np.ndarray, z_shocked: np.ndarray) -> np.ndarray:
    """Annual extra shift dphi_j on [t+j-1, t+j) turning curve z into z_shocked."""
    gap = (np.asarray(z_shocked, dtype=float) - np.asarray(z, dtype=float)) * np.arange(
        1, np.shape(z)[-1] + 1
    )
    return np.diff(gap, axis=-1, prepend=0.0)


def apply_rate_shock(
    z: np.ndarray,
    shock: RateShock,
    direction: str,
    base: ShiftCurve = ShiftCurve(),
    t: int = 0,
) -> ShiftCurve:
    """Shift curve whose model prices at date t reproduce the shocked zero curve.

    ``z`` is the unshocked zero curve at t for maturities 1..M; beyond M the
    last increment is extended flat.
    """
    inc = shift_increments(z, shocked_zero_rates(z, shock, direction))
    M = inc.shape[-1]
    values = np.asarray(base.annual(0, t + M), dtype=float)
    values[t:] += inc
    tail = base.tail + float(inc[-1])
    return ShiftCurve(tuple(float(v) for v in values), tail)
