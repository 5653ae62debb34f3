"""Run-off ALM projection of a participating savings portfolio and its SCR.

The balance sheet is vectorised: every array has a leading batch axis, one
entry per projected path. A year consists of five steps: bond cash flows,
exits, reallocation, crediting, and externalisation of margin and of the
capitalisation reserve. Accounting rules the model leaves open are fixed
as follows.

* Reallocation buys bonds of every maturity at par at their own swap rate
  when the bond target grows, and sells existing bonds pro rata when it
  shrinks. Realised bond gains go to the capitalisation reserve (CR).
* The CR sits outside the portfolio, earns the one-year rate, and its
  interest is paid to shareholders. Losses beyond the CR hit the P&L.
* Crediting follows four cases. (A) target reachable without latent gains
  (all latent losses realised). (B) target reachable by realising part of
  the latent gain. (C) only the guaranteed rate reachable, all latent gain
  used. (D) not even the guaranteed rate, the profit-sharing reserve (PSR)
  is emptied and shareholders fund the rest. The target rate is
  max(r_G, r_comp). A share pi of financial income is always allocated
  to policyholders, and the PSR releases at most rho_bar of its balance
  per year.
* At T the portfolio is sold, policyholders receive MR_T + PSR_T, and the
  CR is released to shareholders.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError, NumericalError
from .estimators import Aggregator, NestedProblem
from .market import (
    MarketParams,
    MarketState,
    RateShock,
    bond_values,
    shift_increments,
    shocked_zero_rates,
    simulate_paths,
    swap_rates,
    zc_curve,
    zero_rates,
)

VARIANTS = ("base", "up", "down", "eq")


@dataclass(frozen=True)
class ALMParams:
    w_S: float | tuple[float, ...] = 0.05
    pi_pr: float = 0.9
    r_G: float = 0.015
    p_exit: float = 0.05
    DSR_max: float = 0.3
    alpha: float = -0.05
    beta: float = -0.01
    rho_bar: float = 0.5
    n: int = 20
    T: int = 30
    MR0: float = 100.0
    equity_shock: float = 0.39
    rate_shock: RateShock = field(default_factory=RateShock)

    def __post_init__(self):
        ws = self.w_S if isinstance(self.w_S, tuple) else (self.w_S,)
        if any(not 0.0 <= w <= 1.0 for w in ws):
            raise ConfigError("equity weights must lie in [0, 1]")
        if not self.alpha < self.beta <= 0.0:
            raise ConfigError("need alpha < beta <= 0")
        if not 0.0 <= self.pi_pr <= 1.0:
            raise ConfigError("pi_pr must lie in [0, 1]")
        if not 0.0 <= self.rho_bar <= 1.0:
            raise ConfigError("rho_bar must lie in [0, 1]")
        if self.n < 1 or self.T < 1:
            raise ConfigError("n and T must be positive")
        if not 0.0 <= self.p_exit <= 1.0:
            raise ConfigError("p_exit must lie in [0, 1]")
        if self.MR0 <= 0:
            raise ConfigError("MR0 must be positive")
        if not 0.0 <= self.equity_shock < 1.0:
            raise ConfigError("equity_shock must lie in [0, 1)")

    def weight(self, t: int) -> float:
        if isinstance(self.w_S, tuple):
            return self.w_S[min(t, len(self.w_S) - 1)]
        return self.w_S


def dsr(delta, params: ALMParams):
    """Dynamic surrender rate as a function of r_ph - r_comp."""
    d = np.asarray(delta, dtype=float)
    ramp = params.DSR_max * (params.beta - d) / (params.beta - params.alpha)
    out = np.where(d <= params.alpha, params.DSR_max, np.where(d < params.beta, ramp, 0.0))
    return out if out.ndim else float(out)


@dataclass
class BalanceSheet:
    t: int
    phi_S: np.ndarray
    phi_b: np.ndarray
    coupons: np.ndarray
    BV_S: np.ndarray
    BV_b: np.ndarray
    MR: np.ndarray
    PSR: np.ndarray
    CR: np.ndarray
    MV: np.ndarray
    delta: np.ndarray
    alive: np.ndarray

    def __len__(self) -> int:
        return self.MR.shape[0]

    def _map(self, fn) -> "BalanceSheet":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        return BalanceSheet(t=self.t, **{k: fn(v) for k, v in kw.items() if k != "t"})

    def __getitem__(self, idx) -> "BalanceSheet":
        return self._map(lambda a: a[idx])

    def repeat(self, K: int) -> "BalanceSheet":
        """Each path repeated K times consecutively."""
        return self._map(lambda a: np.repeat(a, K, axis=0))

    def tile(self, m: int) -> "BalanceSheet":
        return self._map(lambda a: np.concatenate([a] * m, axis=0))

    def copy(self) -> "BalanceSheet":
        return self._map(np.copy)


def initial_sheet(params: ALMParams, market: MarketParams, size: int = 1) -> BalanceSheet:
    """MR0 invested with weight w_S in equity and the rest in a par ladder."""
    w = params.weight(0)
    zc = zc_curve(0, params.n, market.x0, market)
    c0 = swap_rates(zc)
    full = lambda v: np.full(size, float(v))  # noqa: E731
    mr = params.MR0
    return BalanceSheet(
        t=0,
        phi_S=full(w * mr / market.S0),
        phi_b=full((1.0 - w) * mr),
        coupons=np.tile(c0, (size, 1)),
        BV_S=full(w * mr),
        BV_b=full((1.0 - w) * mr),
        MR=full(mr),
        PSR=full(0.0),
        CR=full(0.0),
        MV=full(mr),
        delta=full(0.0),
        alive=np.ones(size, dtype=bool),
    )


@dataclass
class YearMarket:
    """Market at date t: equity, short rate, curve P(t, t+i), and P(t-1, t)."""

    S: np.ndarray
    r: np.ndarray
    zc: np.ndarray
    p_prev: np.ndarray


@dataclass
class CreditingOutcome:
    case: np.ndarray
    r_ph: np.ndarray
    margin: np.ndarray
    pnl: np.ndarray
    realized_gain: np.ndarray


@dataclass
class StepDiagnostics:
    mv_pre: np.ndarray
    mv_realloc: np.ndarray
    equity_fraction: np.ndarray
    participation_gap: np.ndarray
    par_error: float
    r_ph: np.ndarray
    mr_growth: np.ndarray


class InvariantError(NumericalError):
    pass


def _pos(v):
    return np.maximum(v, 0.0)


def _credit(FI, U_lo, U_hi, MRp, PSR, r_comp, params: ALMParams):
    """Crediting waterfall; returns (case, R, r_ph, PSR_new, C_amt)."""
    pi, rho = params.pi_pr, params.rho_bar
    target = np.maximum(params.r_G, r_comp)
    need_T = target * MRp
    need_G = params.r_G * MRp

    def avail(R):
        return pi * _pos(FI + R) + rho * PSR

    a_lo, a_hi = avail(U_lo), avail(U_hi)
    case_a = a_lo >= need_T
    case_b = ~case_a & (a_hi >= need_T)
    case_c = ~case_a & ~case_b & (a_hi >= need_G)
    if pi > 0:
        r_b = np.clip((need_T - rho * PSR) / pi - FI, U_lo, U_hi)
    else:
        r_b = U_hi
    R = np.where(case_a, U_lo, np.where(case_b, r_b, U_hi))
    safe = np.where(MRp > 0, MRp, 1.0)
    rate_c = a_hi / safe
    rate_d = np.maximum(params.r_G, (pi * _pos(FI + U_hi) + PSR) / safe)
    smooth = rho * (PSR + pi * _pos(FI + U_lo)) / safe
    r_ph = np.where(case_a, np.maximum(target, smooth), target)
    r_ph = np.where(case_a | case_b, r_ph, np.where(case_c, rate_c, rate_d))
    r_ph = np.where(MRp > 0, r_ph, target)
    C_amt = r_ph * MRp
    PSR_new = _pos(PSR + pi * _pos(FI + R) - C_amt)
    case = np.select([case_a, case_b, case_c], [0, 1, 2], 3)
    return case, R, r_ph, PSR_new, C_amt


def step_year(
    sheet: BalanceSheet, mkt: YearMarket, params: ALMParams, check: bool = False
) -> tuple[BalanceSheet, CreditingOutcome, StepDiagnostics]:
    """Advance every path from t-1 to t (t < T)."""
    n = params.n
    t = sheet.t + 1
    w = params.weight(t)
    alive = sheet.alive

    # 1. bond cash flows
    a = sheet.phi_b / n
    coupon_income = a * sheet.coupons.sum(axis=1)
    inflow = a + coupon_income
    # 2. exits
    pe = np.minimum(1.0, params.p_exit + dsr(sheet.delta, params))
    exit_int = pe * sheet.MR * params.r_G / 2.0
    gap = inflow - pe * sheet.MR - exit_int
    # 3. reallocation
    B_old = bond_values(sheet.coupons[:, 1:], mkt.zc[:, : n - 1])
    V_old = a * B_old.sum(axis=1)
    mv_pre = gap + sheet.phi_S * mkt.S + V_old
    solvent = alive & (mv_pre > 0)
    MV = np.where(solvent, mv_pre, 1.0)

    phi_S = w * MV / mkt.S
    buy_s = phi_S >= sheet.phi_S
    ratio = np.divide(phi_S, sheet.phi_S, out=np.ones_like(phi_S), where=sheet.phi_S > 0)
    BV_S = np.where(buy_s, sheet.BV_S + (phi_S - sheet.phi_S) * mkt.S, sheet.BV_S * ratio)
    R_S = np.where(buy_s, 0.0, (sheet.phi_S - phi_S) * mkt.S - sheet.BV_S * (1.0 - ratio))

    swap = swap_rates(mkt.zc)
    V_target = (1.0 - w) * MV
    buy_b = V_target >= V_old + a
    beta = np.divide(V_old, sheet.phi_b, out=np.zeros_like(V_old), where=sheet.phi_b > 0) + 1.0 / n
    phi_b = np.where(buy_b, V_target - V_old + a * (n - 1), V_target / beta)
    b_new = phi_b / n
    mixed = np.divide(
        a[:, None] * sheet.coupons[:, 1:] + (b_new - a)[:, None] * swap[:, : n - 1],
        b_new[:, None],
        out=swap[:, : n - 1].copy(),
        where=b_new[:, None] > 0,
    )
    coupons = np.empty_like(sheet.coupons)
    coupons[:, : n - 1] = np.where(buy_b[:, None], mixed, sheet.coupons[:, 1:])
    coupons[:, n - 1] = swap[:, n - 1]
    G_b = np.where(buy_b, 0.0, (a - b_new) * (B_old - 1.0).sum(axis=1))
    BV_b = phi_b

    # 4. crediting
    MRp = sheet.MR * (1.0 - pe)
    FI = coupon_income + R_S
    U = phi_S * mkt.S - BV_S
    case, R, r_ph, PSR_new, C_amt = _credit(
        FI, np.minimum(U, 0.0), np.maximum(U, 0.0), MRp, sheet.PSR, mkt.r, params
    )
    BV_S = BV_S + R
    MR = MRp * (1.0 + r_ph)
    margin = FI + R - C_amt - (PSR_new - sheet.PSR) - exit_int

    cr_after = sheet.CR + G_b
    shortfall = np.minimum(cr_after, 0.0)
    CR = np.maximum(cr_after, 0.0)
    cr_interest = sheet.CR * (1.0 / mkt.p_prev - 1.0)
    pnl = margin + cr_interest + shortfall

    # 5. externalisation of margin and CR movements
    bond_mv = phi_b * (bond_values(coupons, mkt.zc).mean(axis=1))
    mv_realloc = phi_S * mkt.S + bond_mv
    MV_post = MV - margin - G_b
    solvent &= MV_post > 0
    f = np.divide(MV_post, MV, out=np.ones_like(MV), where=MV > 0)

    keep = lambda new, old: np.where(solvent, new, old)  # noqa: E731
    keep2 = lambda new, old: np.where(solvent[:, None], new, old)  # noqa: E731
    out = BalanceSheet(
        t=t,
        phi_S=keep(phi_S * f, sheet.phi_S),
        phi_b=keep(phi_b * f, sheet.phi_b),
        coupons=keep2(coupons, sheet.coupons),
        BV_S=keep(BV_S * f, sheet.BV_S),
        BV_b=keep(BV_b * f, sheet.BV_b),
        MR=keep(MR, sheet.MR),
        PSR=keep(PSR_new, sheet.PSR),
        CR=keep(CR, sheet.CR),
        MV=keep(MV_post, sheet.MV),
        delta=keep(r_ph - mkt.r, sheet.delta),
        alive=solvent,
    )
    outcome = CreditingOutcome(
        case=case,
        r_ph=r_ph,
        margin=np.where(solvent, margin, 0.0),
        pnl=np.where(solvent, pnl, 0.0),
        realized_gain=np.where(solvent, R_S + R, 0.0),
    )
    distributed = C_amt + (PSR_new - sheet.PSR)
    par_err = float(np.max(np.abs(bond_values(swap, mkt.zc) - 1.0), initial=0.0))
    diag = StepDiagnostics(
        mv_pre=np.where(solvent, mv_pre, np.nan),
        mv_realloc=np.where(solvent, mv_realloc, np.nan),
        equity_fraction=np.where(solvent, phi_S * mkt.S / mv_realloc, np.nan),
        participation_gap=np.where(
            solvent & (case <= 1), distributed - params.pi_pr * _pos(FI + R), np.nan
        ),
        par_error=par_err,
        r_ph=np.where(solvent, r_ph, np.nan),
        mr_growth=np.where(solvent & (sheet.MR > 0), MR / np.where(sheet.MR > 0, sheet.MR, 1.0), np.nan),
    )
    if check:
        check_step(diag, w, params)
    return out, outcome, diag


def check_step(diag: StepDiagnostics, w: float, params: ALMParams, tol: float = 1e-9):
    """Raise InvariantError if any accounting invariant is violated."""
    scale = np.nanmax(np.abs(diag.mv_pre), initial=1.0)
    if np.nanmax(np.abs(diag.mv_realloc - diag.mv_pre), initial=0.0) > tol * scale:
        raise InvariantError("reallocation does not conserve market value")
    if np.nanmax(np.abs(diag.equity_fraction - w), initial=0.0) > 1e-10:
        raise InvariantError("equity weight not attained after reallocation")
    if np.nanmin(diag.r_ph, initial=np.inf) < params.r_G - 1e-12:
        raise InvariantError("credited rate below the guaranteed rate")
    if np.nanmin(diag.participation_gap, initial=0.0) < -tol * scale:
        raise InvariantError("participation constraint violated")
    if diag.par_error > 1e-12:
        raise InvariantError(f"new bonds not at par (error {diag.par_error:.3g})")


def final_step(sheet: BalanceSheet, mkt: YearMarket, params: ALMParams):
    """Year T: cash flows and exits, then the portfolio is sold and cleared."""
    n = params.n
    a = sheet.phi_b / n
    coupon_income = a * sheet.coupons.sum(axis=1)
    pe = np.minimum(1.0, params.p_exit + dsr(sheet.delta, params))
    exit_int = pe * sheet.MR * params.r_G / 2.0
    gap = a + coupon_income - pe * sheet.MR - exit_int
    B_old = bond_values(sheet.coupons[:, 1:], mkt.zc[:, : n - 1])
    MV = gap + sheet.phi_S * mkt.S + a * B_old.sum(axis=1)
    R_S = sheet.phi_S * mkt.S - sheet.BV_S
    MRp = sheet.MR * (1.0 - pe)
    FI = coupon_income + R_S
    zero = np.zeros_like(FI)
    case, R, r_ph, PSR_new, C_amt = _credit(FI, zero, zero, MRp, sheet.PSR, mkt.r, params)
    MR = MRp * (1.0 + r_ph)
    pnl = MV - MR - PSR_new + sheet.CR / mkt.p_prev
    pnl = np.where(sheet.alive, pnl, 0.0)
    return CreditingOutcome(case, r_ph, pnl, pnl, np.where(sheet.alive, R_S, 0.0))


# --------------------------------------------------------------------------
# market views


@dataclass
class MarketView:
    """Paths for a batch of balance sheets from date t0, plus an optional shock.

    ``extra_cum[:, m]`` is the integral of the extra shift over [t0, t0+m];
    equity values already include any multiplicative shock.
    """

    t0: int
    S: np.ndarray
    x: np.ndarray
    r: np.ndarray
    int_r: np.ndarray
    market: MarketParams
    n: int
    extra_cum: np.ndarray | None = None

    @property
    def years(self) -> int:
        return self.S.shape[1] - 1

    def curve(self, j: int) -> np.ndarray:
        extra = None
        if self.extra_cum is not None:
            extra = self.extra_cum[:, j + 1 : j + 1 + self.n] - self.extra_cum[:, j : j + 1]
        return zc_curve(self.t0 + j, self.n, self.x[:, j], self.market, extra)

    def year(self, j: int, prev_zc: np.ndarray) -> YearMarket:
        return YearMarket(self.S[:, j], self.r[:, j], self.curve(j), prev_zc[:, 0])


def _flat_extend(inc: np.ndarray, length: int) -> np.ndarray:
    if inc.shape[-1] >= length:
        return inc[..., :length]
    pad = np.repeat(inc[..., -1:], length - inc.shape[-1], axis=-1)
    return np.concatenate([inc, pad], axis=-1)


def shock_increments(x_t, t: int, direction: str, alm: ALMParams, market: MarketParams, horizon: int):
    """Per-path extra shift increments for a rate shock at date t."""
    M = alm.rate_shock.maturities[-1]
    M = max(M, horizon)
    z = zero_rates(zc_curve(t, M, x_t, market))
    inc = shift_increments(z, shocked_zero_rates(z, alm.rate_shock, direction))
    return _flat_extend(inc, horizon)


def _view_from_paths(paths, market: MarketParams, n: int, extra_inc=None, s_factor=1.0) -> MarketView:
    B = int(np.prod(paths.S.shape[:-1]))
    Y = paths.S.shape[-1] - 1
    S = paths.S.reshape(B, Y + 1) * s_factor
    x = paths.x.reshape(B, Y + 1)
    r = paths.r.reshape(B, Y + 1)
    int_r = paths.int_r.reshape(B, Y + 1)
    extra_cum = None
    if extra_inc is not None:
        inc = extra_inc.reshape(B, -1)
        extra_cum = np.concatenate([np.zeros((B, 1)), np.cumsum(inc, axis=1)], axis=1)
        S = S * np.exp(extra_cum[:, : Y + 1])
        int_r = int_r + np.concatenate([np.zeros((B, 1)), inc[:, :Y]], axis=1)
        r = r + inc[:, : Y + 1]
    return MarketView(paths.t0, S, x, r, int_r, market, n, extra_cum)


def project(
    sheet: BalanceSheet,
    view: MarketView,
    params: ALMParams,
    stop: int | None = None,
    check: bool = False,
    prev_zc: np.ndarray | None = None,
):
    """Project from view.t0 to ``stop`` (default T); liquidation at T.

    Returns a list of (sheet, outcome, diagnostics) per year (diagnostics is
    None for the liquidation year) and the discount factors of each year.
    """
    stop = params.T if stop is None else stop
    if sheet.t != view.t0:
        raise ValueError("balance sheet and market view start at different dates")
    if stop > params.T or stop < sheet.t:
        raise ValueError(f"cannot project from {sheet.t} to {stop}")
    if stop - sheet.t > view.years:
        raise ValueError("market view too short")
    zc = view.curve(0) if prev_zc is None else prev_zc
    disc = np.ones(len(sheet))
    records, discounts = [], []
    for j in range(1, stop - sheet.t + 1):
        mkt = view.year(j, zc)
        disc = disc * np.exp(-view.int_r[:, j])
        if sheet.t + 1 == params.T:
            outcome = final_step(sheet, mkt, params)
            sheet = replace(sheet, t=params.T, alive=np.zeros_like(sheet.alive))
            records.append((sheet, outcome, None))
        else:
            sheet, outcome, diag = step_year(sheet, mkt, params, check)
            records.append((sheet, outcome, diag))
        discounts.append(disc)
        zc = mkt.zc
    return records, discounts


def discounted_pnl(sheet: BalanceSheet, view: MarketView, params: ALMParams, check: bool = False):
    """Sum over u in (t0, T] of exp(-int_{t0}^u r) P&L_u, one value per path."""
    zc = view.curve(0)
    disc = np.ones(len(sheet))
    total = np.zeros(len(sheet))
    for j in range(1, params.T - sheet.t + 1):
        mkt = view.year(j, zc)
        disc = disc * np.exp(-view.int_r[:, j])
        if sheet.t + 1 == params.T:
            total += disc * final_step(sheet, mkt, params).pnl
            break
        sheet, outcome, _ = step_year(sheet, mkt, params, check)
        total += disc * outcome.pnl
        zc = mkt.zc
    return total


# --------------------------------------------------------------------------
# outer scenarios, BOF and SCR


@dataclass
class OuterBatch:
    """Balance sheets and market states at the SCR date t."""

    sheet: BalanceSheet
    S: np.ndarray
    x: np.ndarray
    L: np.ndarray
    r: np.ndarray
    zc: np.ndarray

    def __len__(self) -> int:
        return len(self.sheet)

    def __getitem__(self, idx) -> "OuterBatch":
        return OuterBatch(self.sheet[idx], self.S[idx], self.x[idx], self.L[idx], self.r[idx], self.zc[idx])


def outer_from_normals(
    normals: np.ndarray,
    t: int,
    alm: ALMParams,
    market: MarketParams,
    setup_market: MarketParams | None = None,
    check: bool = False,
) -> OuterBatch:
    """Project N paths to date t; ``normals`` has shape (N, t, 3).

    ``setup_market`` sets up the time-0 balance sheet (defaults to ``market``);
    a different value models a market move right after the setup.
    """
    N = normals.shape[0]
    sheet = initial_sheet(alm, setup_market or market, N)
    paths = simulate_paths(market, normals)
    view = _view_from_paths(paths, market, alm.n)
    if t > 0:
        records, _ = project(sheet, view, alm, stop=t, check=check)
        sheet = records[-1][0]
    return OuterBatch(
        sheet, paths.S[:, t], paths.x[:, t], paths.L[:, t], paths.r[:, t], view.curve(t)
    )


def inner_values(
    outer: OuterBatch,
    normals: np.ndarray,
    alm: ALMParams,
    market: MarketParams,
    variants=VARIANTS,
    check: bool = False,
) -> np.ndarray:
    """Discounted future P&L for each variant, shape (len(variants), N, K).

    ``normals`` has shape (N, K, T - t, 3); every variant reuses them.
    """
    N, K, Y = normals.shape[:3]
    t = outer.sheet.t
    if Y != alm.T - t:
        raise ValueError(f"need {alm.T - t} years of inner normals, got {Y}")
    start = MarketState(t, outer.S[:, None], outer.x[:, None], np.ones((N, 1)))
    paths = simulate_paths(market, normals, start)
    horizon = Y + alm.n + 1
    views, sheets = [], []
    for v in variants:
        inc, factor = None, 1.0
        if v in ("up", "down"):
            inc = np.broadcast_to(
                shock_increments(outer.x, t, v, alm, market, horizon)[:, None, :], (N, K, horizon)
            )
        elif v == "eq":
            factor = 1.0 - alm.equity_shock
        elif v != "base":
            raise ValueError(f"unknown variant {v!r}")
        views.append(_view_from_paths(paths, market, alm.n, inc, factor))
        sheets.append(outer.sheet.repeat(K))
    view = _concat_views(views)
    sheet = _concat_sheets(sheets)
    vals = discounted_pnl(sheet, view, alm, check)
    return vals.reshape(len(variants), N, K)


def _concat_views(views: list[MarketView]) -> MarketView:
    v0 = views[0]
    extra = None
    if any(v.extra_cum is not None for v in views):
        width = max(v.extra_cum.shape[1] for v in views if v.extra_cum is not None)
        extra = np.concatenate(
            [
                v.extra_cum if v.extra_cum is not None else np.zeros((v.S.shape[0], width))
                for v in views
            ]
        )
    cat = lambda name: np.concatenate([getattr(v, name) for v in views])  # noqa: E731
    return MarketView(v0.t0, cat("S"), cat("x"), cat("r"), cat("int_r"), v0.market, v0.n, extra)


def _concat_sheets(sheets: list[BalanceSheet]) -> BalanceSheet:
    kw = {
        f.name: np.concatenate([getattr(s, f.name) for s in sheets])
        for f in fields(BalanceSheet)
        if f.name != "t"
    }
    return BalanceSheet(t=sheets[0].t, **kw)


def bof(
    outer: OuterBatch,
    K: int,
    alm: ALMParams,
    market: MarketParams,
    seed: int = 0,
    variants=VARIANTS,
) -> np.ndarray:
    """Inner-sample BOF per outer path and variant, shape (len(variants), N)."""
    from .rng import streams

    Y = alm.T - outer.sheet.t
    rngs = streams(seed, 0, 0, len(outer))
    normals = np.stack([r.standard_normal((K, Y, 3)) for r in rngs])
    return inner_values(outer, normals, alm, market, variants).mean(axis=2)


@dataclass
class SCRReport:
    scr_up: np.ndarray
    scr_down: np.ndarray
    scr_int: np.ndarray
    scr_eq: np.ndarray
    scr_mkt: np.ndarray
    epsilon_used: np.ndarray


def aggregate_mkt(scr_eq, scr_int, int_driver):
    """sqrt(eq^2 + int^2 + 2 eps eq int) with eps = 1/2 when the down shock drives int."""
    eq = np.asarray(scr_eq, dtype=float)
    it = np.asarray(scr_int, dtype=float)
    if np.any(eq < 0) or np.any(it < 0):
        raise ValueError("SCR inputs must be non-negative")
    if isinstance(int_driver, str):
        if int_driver not in ("up", "down"):
            raise ValueError("int_driver must be 'up' or 'down'")
        eps = 0.5 if int_driver == "down" else 0.0
    else:
        eps = np.where(np.asarray(int_driver, dtype=bool), 0.5, 0.0)
    out = np.sqrt(eq * eq + it * it + 2.0 * eps * eq * it)
    return out if np.ndim(out) else float(out)


def scr_report(means) -> SCRReport:
    """SCR modules from inner means (base-up, base-down, base-eq, 0) on the last axis."""
    m = np.asarray(means, dtype=float)
    up, down = _pos(m[..., 0]), _pos(m[..., 1])
    it = np.maximum(up, down)
    eq = _pos(m[..., 2])
    driver_down = m[..., 1] > m[..., 0]
    return SCRReport(up, down, it, eq, aggregate_mkt(eq, it, driver_down), np.where(driver_down, 0.5, 0.0))


def scr_aggregators() -> dict[str, Aggregator]:
    """All SCR modules, each a function of the same inner means."""
    return {
        "int": Aggregator(lambda m: scr_report(m).scr_int, "int"),
        "up": Aggregator(lambda m: scr_report(m).scr_up, "up"),
        "down": Aggregator(lambda m: scr_report(m).scr_down, "down"),
        "eq": Aggregator(lambda m: scr_report(m).scr_eq, "eq"),
        "mkt": Aggregator(lambda m: scr_report(m).scr_mkt, "mkt"),
    }


def scr_problem(
    t: int,
    alm: ALMParams = ALMParams(),
    market: MarketParams = MarketParams(),
    setup_market: MarketParams | None = None,
    max_batch_draws: int = 1 << 13,
) -> NestedProblem:
    """SCR at date t as a nested problem with P = 4 and weight L_t.

    Outer paths are simulated under the pricing measure and weighted by the
    density of the real measure. Each scenario's stream first yields its
    outer normals (t x 3), then K x (T - t) x 3 inner normals.
    """
    if not 0 <= t < alm.T:
        raise ConfigError(f"SCR date must lie in [0, T), got {t}")
    Y = alm.T - t

    def sample_outer(rngs):
        normals = np.stack([r.standard_normal((t, 3)) for r in rngs]) if rngs else np.empty((0, t, 3))
        return outer_from_normals(normals, t, alm, market, setup_market)

    def sample_inner(outer, rngs, K):
        normals = np.stack([r.standard_normal((K, Y, 3)) for r in rngs])
        base, up, down, eq = inner_values(outer, normals, alm, market)
        y = np.empty((len(outer), K, 4))
        y[..., 0] = base - up
        y[..., 1] = base - down
        y[..., 2] = base - eq
        y[..., 3] = 0.0
        return y

    return NestedProblem(
        n_components=4,
        sample_outer=sample_outer,
        sample_inner=sample_inner,
        weight=lambda outer: outer.L,
        inner_cost_hint=float(Y),
        max_batch_draws=max_batch_draws,
        label=f"scr[t={t}]",
    )


def risk_factors(sheet: BalanceSheet, S, r, zc) -> np.ndarray:
    """Twelve candidate regressors per path, shape (N, 12)."""
    bond_mv = sheet.phi_b * bond_values(sheet.coupons, zc).mean(axis=1)
    return np.column_stack(
        [
            S,
            r,
            sheet.phi_S,
            sheet.phi_b,
            sheet.BV_b,
            sheet.BV_S,
            sheet.MR,
            sheet.PSR,
            sheet.CR,
            sheet.MV,
            bond_mv,
            sheet.phi_S * S,
        ]
    )


RISK_FACTOR_NAMES = (
    "S", "r", "phi_S", "phi_b", "BV_b", "BV_S", "MR", "PSR", "CR", "MV", "bond_MV", "equity_MV",
)


def outer_risk_factors(outer: OuterBatch) -> np.ndarray:
    return risk_factors(outer.sheet, outer.S, outer.r, outer.zc)


def sensitivity(
    bump: str,
    delta: float,
    estimate,
    alm: ALMParams = ALMParams(),
    market: MarketParams = MarketParams(),
    t: int = 10,
) -> tuple[float, float, float]:
    """Finite-difference sensitivity of an SCR expectation to a market bump.

    ``bump`` is 'S0', 'r0' or any MarketParams field. The balance sheet is
    set up with the unbumped market and the bump hits right after, so the
    derivative measures the SCR response to a market move with holdings
    fixed. ``estimate(problem) -> float`` must use common random numbers.
    Returns (derivative, base value, bumped value).
    """
    if delta == 0:
        raise ConfigError("bump size must be non-zero")
    name = "x0" if bump == "r0" else bump
    if name not in {f.name for f in fields(MarketParams)}:
        raise ConfigError(f"unknown bump parameter {bump!r}")
    bumped = replace(market, **{name: getattr(market, name) + delta})
    base_val = estimate(scr_problem(t, alm, market))
    bump_val = estimate(scr_problem(t, alm, bumped, setup_market=market))
    return (bump_val - base_val) / delta, base_val, bump_val


__all__ = [name for name in dir() if not name.startswith("_") and name != "annotations"]
