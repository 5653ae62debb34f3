"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line, printed in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

import discrete_oracle as oracle
from conftest import ACCEPTANCE_LINES
from scr_mlmc import experiments
from scr_mlmc.alm import (
    ALMParams,
    MarketView,
    aggregate_mkt,
    initial_sheet,
    inner_values,
    outer_from_normals,
    project,
    scr_aggregators,
    scr_problem,
    scr_report,
)
from scr_mlmc.butterfly import ButterflyParams, reference_value, standardize, toy_problem
from scr_mlmc.config import ExperimentConfig
from scr_mlmc.estimators import (
    LevelSchedule,
    antithetic_h,
    antithetic_mlmc_estimate,
    max_aggregator,
    mlmc_estimate,
    nested_estimate,
)
from scr_mlmc.lsmc import HypercubePartition, lsmc_estimate
from scr_mlmc.market import MarketParams, gaussian_triple, simulate_paths, triple_covariance
from scr_mlmc.rng import derive_seed, streams


def record(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def test_01_toy_nested_reference():
    start = time.perf_counter()
    r = nested_estimate(toy_problem(ButterflyParams()), max_aggregator(), 100_000, 1000, seed=3)
    elapsed = time.perf_counter() - start
    ref = reference_value(ButterflyParams())
    z = abs(r.value - ref) / r.std_error
    ok = z <= 3 and elapsed < 60
    assert record(1, ok, f"nested={r.value:.5f} ref={ref:.5f} |z|={z:.2f} time={elapsed:.1f}s")


def test_02_bias_rate():
    rows = experiments.toy_bias(ExperimentConfig("toy-bias", seed=1))
    s = slope([r[0] for r in rows], [abs(r[1]) for r in rows])
    assert record(2, -1.3 <= s <= -0.7, f"bias slope={s:.3f} in [-1.3, -0.7]")


def test_03_antithetic_level_variance():
    rows = experiments.toy_levelvar(ExperimentConfig("toy-levelvar", seed=1))
    s = slope([r[0] for r in rows], [r[2] for r in rows])
    assert record(3, -1.8 <= s <= -1.2, f"antithetic variance slope={s:.3f} in [-1.8, -1.2]")


@pytest.fixture(scope="module")
def toy_rmse_rows():
    rows = experiments.toy_rmse(ExperimentConfig("toy-rmse", seed=1, n_batch=10))
    return [r for r in rows if r[0] == "antithetic"]


def test_04_antithetic_complexity(toy_rmse_rows):
    s = slope([r[2] for r in toy_rmse_rows], [r[3] for r in toy_rmse_rows])
    assert record(4, abs(s + 0.5) <= 0.15, f"RMSE-vs-cost slope={s:.3f} in [-0.65, -0.35] (K0=8)")


def test_antithetic_rmse_decreases_with_epsilon(toy_rmse_rows):
    rmse = [r[3] for r in toy_rmse_rows]
    assert all(b < a for a, b in zip(rmse, rmse[1:]))


@pytest.mark.xfail(strict=True, reason="RMSE decays like J^-1/2 on this problem, not J^-1/3")
def test_05_lsmc_rate():
    # MSE = mean reported variance + debiased squared bias, which is far less
    # noisy than the 10-batch empirical RMSE; both slopes are reported
    toy = ButterflyParams()
    prob, ref = toy_problem(toy), reference_value(toy)
    J_list = (1000, 2000, 4000, 8000, 16000, 32000)
    n_batch = 10
    mse, raw = [], []
    for i, J in enumerate(J_list):
        part = HypercubePartition(1, round(J ** (1 / 3)), ((-3.0, 3.0),))
        reps = [
            lsmc_estimate(prob, lambda x: standardize(x, toy), J, part, derive_seed(0, i, b))
            for b in range(n_batch)
        ]
        v = np.array([r.value for r in reps])
        var = float(np.mean([r.std_error**2 for r in reps]))
        mse.append(var + max((v.mean() - ref) ** 2 - var / n_batch, 0.0))
        raw.append(float(np.sqrt(np.mean((v - ref) ** 2))))
    s = 0.5 * slope(J_list, mse)
    s_raw = slope(J_list, raw)
    ok = abs(s + 1 / 3) <= 0.1
    assert record(5, ok, f"LSMC RMSE slope={s:.3f} (protocol RMSE {s_raw:.3f}) in [-0.433, -0.233]")


def test_06_discrete_oracle():
    prob, agg = oracle.problem(), max_aggregator()
    exact = oracle.exact_value()
    sched = LevelSchedule(K=(128, 256, 512, 1024), J=(8000, 2000, 500, 125))
    part = HypercubePartition(1, 4, ((-0.5, 3.5),))
    estimates = {
        "nested": nested_estimate(prob, agg, 4000, 1024, seed=1),
        "mlmc": mlmc_estimate(prob, agg, sched, seed=2),
        "antithetic": antithetic_mlmc_estimate(prob, agg, sched, seed=3)[0],
        "lsmc": lsmc_estimate(prob, lambda x: x, 200_000, part, seed=4),
    }
    z = {k: abs(r.value - exact) / r.std_error for k, r in estimates.items()}

    # telescoping: E[multilevel] = E[nested at K_L], same for the antithetic variant
    small = LevelSchedule(K=(2, 4, 8), J=(16, 8, 4))
    target = oracle.exact_nested_mean(8)
    macro = {"plain": [], "anti": []}
    for r in range(10_000):
        macro["plain"].append(mlmc_estimate(prob, agg, small, seed=derive_seed(6, r)).value)
        macro["anti"].append(antithetic_mlmc_estimate(prob, agg, small, seed=derive_seed(7, r))[0].value)
    for k, v in macro.items():
        v = np.asarray(v)
        z[f"tele-{k}"] = abs(v.mean() - target) / (v.std(ddof=1) / math.sqrt(v.size))
    ok = all(v <= 3 for v in z.values())
    detail = " ".join(f"{k}:|z|={v:.2f}" for k, v in z.items())
    assert record(6, ok, f"I={exact:.4f} E[nested_8]={target:.4f} {detail}")


def test_07_antithetic_identity():
    grid = np.array([-3.0, -1.0, -0.5, -0.0, 0.0, 0.5, 1.0, 3.0])
    x, y = np.meshgrid(grid, grid)
    expected = np.where(x * y <= 0, -np.minimum(np.abs(x), np.abs(y)) / 2, 0.0)
    exact = bool(np.array_equal(antithetic_h(x, y), expected))
    rng = np.random.default_rng(7)
    n = 1_000_000
    a = rng.standard_normal(n) * 10.0 ** rng.uniform(-3, 3, n)
    b = rng.standard_normal(n) * 10.0 ** rng.uniform(-3, 3, n)
    ref = np.where(a * b <= 0, -np.minimum(np.abs(a), np.abs(b)) / 2, 0.0)
    err = np.abs(antithetic_h(a, b) - ref) / np.spacing(np.maximum(np.abs(a), np.abs(b)))
    ok = exact and err.max() <= 1.0
    assert record(7, ok, f"sign grid exact={exact} max error={err.max():.2f} ulp over 1e6 pairs")


def test_08_sampler_exactness():
    rng = np.random.default_rng(8)
    worst = 0.0
    for k, gamma in ((0.2, 0.0), (0.2, 0.5), (1.0, -0.8)):
        dw, dz, i_ou = gaussian_triple(rng, k, gamma, 1_000_000)
        cov = np.cov(np.stack([dw, dz, i_ou]))
        worst = max(worst, float(np.abs(cov - triple_covariance(k, gamma)).max()))
    # 10^6 risk-neutral paths in chunks: E[L_10] = 1 under premia, E[disc S_10] = S0 without
    n, chunk = 1_000_000, 100_000
    L, ds = [], []
    for c in range(n // chunk):
        g = np.random.default_rng([9, c]).standard_normal((chunk, 10, 3))
        L.append(simulate_paths(MarketParams(gamma=0.3, lambda_W=0.2, lambda_Z=0.2), g).L[:, -1])
        path = simulate_paths(MarketParams(gamma=0.3), g)
        ds.append(path.disc[:, -1] * path.S[:, -1])
    L, ds = np.concatenate(L), np.concatenate(ds)
    zL = abs(L.mean() - 1) / (L.std() / math.sqrt(n))
    zS = abs(ds.mean() - 1.0) / (ds.std() / math.sqrt(n))
    ok = worst <= 5e-3 and zL <= 3 and zS <= 3
    assert record(8, ok, f"max cov error={worst:.2e} E[L_10] |z|={zL:.2f} E[disc S_10] |z|={zS:.2f}")


def test_09_alm_invariants():
    # check=True raises on conservation, weight, floor, participation or par failures
    alm, market = ALMParams(), MarketParams()
    N = 4000
    normals = np.random.default_rng(10).standard_normal((N, alm.T, 3))
    paths = simulate_paths(market, normals)
    view = MarketView(0, paths.S, paths.x, paths.r, paths.int_r, market, alm.n)
    records, _ = project(initial_sheet(alm, market, N), view, alm, check=True)
    alive = records[-2][0].alive.mean()
    outer = outer_from_normals(normals[:200, :10], 10, alm, market, check=True)
    inner = np.random.default_rng(11).standard_normal((200, 8, alm.T - 10, 3))
    base, up, down, eq = inner_values(outer, inner, alm, market, check=True).mean(axis=2)
    rep = scr_report(np.stack([base - up, base - down, base - eq, 0 * base], axis=-1))
    max_ok = bool(np.array_equal(rep.scr_int, np.maximum(rep.scr_up, rep.scr_down)))
    mkt_ok = bool(np.all(rep.scr_mkt >= np.maximum(rep.scr_eq, rep.scr_int)))
    ok = len(records) == alm.T and max_ok and mkt_ok
    detail = f"{N} paths x {alm.T}y checked, solvent share={alive:.3f}, scr_int=max {max_ok}, scr_mkt>=max {mkt_ok}"
    assert record(9, ok, detail)


def paired_scr(t, alm, market_a, market_b, setup, module, J, K, seed):
    """Per-scenario SCR under two markets with common random numbers."""
    agg = scr_aggregators()[module]
    out = []
    for market, setup_market in ((market_a, None), (market_b, setup)):
        prob = scr_problem(t, alm, market, setup_market)
        vals = np.empty(J)
        for s in range(0, J, 250):
            rngs = streams(seed, 0, s, min(s + 250, J))
            outer = prob.sample_outer(rngs)
            vals[s : s + len(rngs)] = agg(prob.sample_inner(outer, rngs, K).mean(axis=1)) * prob.weight(outer)
        out.append(vals)
    return out


def test_10a_frontier():
    aggs = scr_aggregators()
    sched = LevelSchedule(K=(32,), J=(2000,))
    eq, dominance = [], []
    for w in (0.0, 0.05, 0.1, 0.15):
        reps = dict(zip(aggs, antithetic_mlmc_estimate(scr_problem(10, ALMParams(w_S=w)), list(aggs.values()), sched, 1)))
        eq.append(reps["eq"].value)
        dominance.append(reps["int"].value >= max(reps["up"].value, reps["down"].value))
    ok = all(b > a for a, b in zip(eq, eq[1:])) and all(dominance)
    assert record("10a", ok, f"E[SCR_eq] over w_S=0..0.15: {np.round(eq, 3).tolist()} int dominates={all(dominance)}")


def test_10b_sensitivity_r0():
    market = MarketParams()
    d = 0.001
    a, b = paired_scr(10, ALMParams(), market, market.bumped(x0=market.x0 + d), market, "mkt", 1000, 16, 4)
    deriv, se = (b - a).mean() / d, (b - a).std(ddof=1) / math.sqrt(a.size) / d
    assert record("10b", deriv + 3 * se < 0, f"dE[SCR_mkt]/dr0={deriv:.3f} +- {se:.3f} (negative)")


@pytest.mark.xfail(strict=True, reason="latent gains and PSR absorb the equity move; see the decisions ledger")
def test_10b_sensitivity_S0():
    market = MarketParams()
    d = 0.01
    a, b = paired_scr(10, ALMParams(), market, market.bumped(S0=market.S0 + d), market, "mkt", 4000, 32, 5)
    deriv, se = (b - a).mean() / d, (b - a).std(ddof=1) / math.sqrt(a.size) / d
    assert record("10b", deriv - 3 * se > 0, f"dE[SCR_mkt]/dS0={deriv:.3f} +- {se:.3f} (positive)")


def test_10c_premium_trend():
    cfg = ExperimentConfig("alm-premia", seed=2)
    cfg.options.update(t_list=(10,), J=2000, K=32, lambda_Z_list=(0.0, 0.1, 0.2))
    rows = [r for r in experiments.alm_premia(cfg) if r[1] == "lambda_Z"]
    vals = [r[4] for r in rows]
    ok = all(b > a for a, b in zip(vals, vals[1:]))
    assert record("10c", ok, f"E^P[SCR_int_10] at lambda_Z=0,0.1,0.2: {np.round(vals, 3).tolist()}")


def test_11_aggregation_examples():
    ok = aggregate_mkt(3, 4, "up") == 5.0 and aggregate_mkt(3, 4, "down") == math.sqrt(37.0)
    assert record(11, ok, f"aggregate_mkt(3,4,up)={aggregate_mkt(3, 4, 'up')!r} (3,4,down)={aggregate_mkt(3, 4, 'down')!r}")
