"""Experiment runners. Each returns a header and rows for one CSV file."""

from __future__ import annotations

import hashlib
import json
import math
import platform
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .alm import RISK_FACTOR_NAMES, outer_risk_factors, scr_aggregators, scr_problem, scr_report, sensitivity
from .butterfly import exact_conditional, reference_value, standardize, toy_problem
from .config import ExperimentConfig
from .errors import ConfigError
from .estimators import (
    EstimatorConfig,
    antithetic_mlmc_estimate,
    level_diagnostics,
    max_aggregator,
    mlmc_estimate,
    nested_estimate,
    schedule_antithetic,
    schedule_plain,
)
from .lsmc import HypercubePartition, forward_select, lsmc_estimate, nested_targets
from .market import simulate_paths
from .rng import derive_seed, streams

SCHEMA_VERSION = 1

COLUMNS = {
    "toy-bias": ("K", "bias", "stderr", "seed"),
    "toy-levelvar": ("K", "var_plain", "var_antithetic", "seed"),
    "toy-rmse": ("estimator", "epsilon", "cost", "rmse", "mean", "reference", "seed"),
    "toy-lsmc": ("J", "n_r", "cost", "rmse", "mean", "reference", "seed"),
    "alm-select": ("step", "feature", "name", "rmse", "seed"),
    "alm-rmse": ("estimator", "parameter", "cost", "rmse", "mean", "reference", "seed"),
    "alm-eta": ("eta", "epsilon", "cost", "rmse", "mean", "reference", "seed"),
    "alm-frontier": ("t", "w_S", "module", "value", "stderr", "seed"),
    "alm-sensitivity": ("bump", "delta", "derivative", "base", "bumped", "seed"),
    "alm-premia": ("t", "premium", "lambda", "module", "value", "stderr", "seed"),
}


def _rmse(values, reference) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.sqrt(np.mean((v - reference) ** 2)))


def _n_r(J: int, d: int, c: float) -> int:
    """Cells per axis for J samples in d dimensions, c * J^(1/(d+2))."""
    return max(1, int(round(c * J ** (1.0 / (d + 2)))))


# --------------------------------------------------------------------------
# toy problem


def toy_bias(cfg: ExperimentConfig):
    o = cfg.options
    problem = toy_problem(cfg.toy)
    ref = exact_conditional(cfg.toy)
    K_list = tuple(o["K_list"])
    runs = [
        level_diagnostics(problem, max_aggregator(), K_list, o["J"], derive_seed(cfg.seed, r), ref)
        for r in range(o["reps"])
    ]
    rows = []
    for i, K in enumerate(K_list):
        b = np.array([run[i].bias_proxy for run in runs])
        se = np.array([run[i].bias_stderr for run in runs])
        rows.append((K, float(b.mean()), float(np.sqrt(np.sum(se**2)) / len(runs)), cfg.seed))
    return rows


def toy_levelvar(cfg: ExperimentConfig):
    o = cfg.options
    diags = level_diagnostics(
        toy_problem(cfg.toy), max_aggregator(), tuple(o["K_list"]), o["J"], cfg.seed, 0.0
    )
    return [(d.K, d.var_plain, d.var_antithetic, cfg.seed) for d in diags]


def toy_rmse(cfg: ExperimentConfig):
    o = cfg.options
    problem = toy_problem(cfg.toy)
    agg = max_aggregator()
    ref = reference_value(cfg.toy)
    rows = []
    for i, eps in enumerate(o["eps_list"]):
        ec = EstimatorConfig(epsilon=eps, eta=o["eta"], K0=o["K0"])
        runs = {"antithetic": [], "mlmc": [], "nested": []}
        costs = {}
        sched_a, sched_p = schedule_antithetic(ec), schedule_plain(ec)
        J_n, K_n = math.ceil(eps**-2), math.ceil(1.0 / eps)
        for b in range(cfg.n_batch):
            s = derive_seed(cfg.seed, i, b)
            ra = antithetic_mlmc_estimate(problem, [agg], sched_a, s)[0]
            rp = mlmc_estimate(problem, agg, sched_p, s)
            rn = nested_estimate(problem, agg, J_n, K_n, s)
            for key, rep in (("antithetic", ra), ("mlmc", rp), ("nested", rn)):
                runs[key].append(rep.value)
                costs[key] = rep.total_cost
        for key, vals in runs.items():
            rows.append((key, eps, costs[key], _rmse(vals, ref), float(np.mean(vals)), ref, cfg.seed))
    return rows


def toy_lsmc(cfg: ExperimentConfig):
    """Indicator regression on the standardised outer draw over [-3, 3]."""
    o = cfg.options
    problem = toy_problem(cfg.toy)
    ref = reference_value(cfg.toy)
    rows = []
    for i, J in enumerate(o["J_list"]):
        n_r = _n_r(J, 1, o["c_r"])
        part = HypercubePartition(1, n_r, ((-3.0, 3.0),))
        vals = [
            lsmc_estimate(
                problem, lambda x: standardize(x, cfg.toy), J, part, derive_seed(cfg.seed, i, b)
            ).value
            for b in range(cfg.n_batch)
        ]
        rows.append((J, n_r, float(J), _rmse(vals, ref), float(np.mean(vals)), ref, cfg.seed))
    return rows


# --------------------------------------------------------------------------
# ALM


def _alm_problem(cfg: ExperimentConfig, t: int | None = None, **alm_changes):
    alm = replace(cfg.alm, **alm_changes) if alm_changes else cfg.alm
    return scr_problem(cfg.options["t"] if t is None else t, alm, cfg.market)


def _selection(cfg: ExperimentConfig):
    o = cfg.options
    problem = _alm_problem(cfg)
    outer = problem.sample_outer(streams(cfg.seed, 0, 0, o["J"]))
    # targets use an independent key so inner draws never reuse outer draws
    targets = nested_targets(problem, scr_aggregators()["int"], outer, o["K"], cfg.seed, level=1)
    return forward_select(outer_risk_factors(outer), targets, o["n_r"], o["max_vars"])


def alm_select(cfg: ExperimentConfig):
    sel = _selection(cfg)
    return [
        (step + 1, f, RISK_FACTOR_NAMES[f], rmse, cfg.seed)
        for step, (f, rmse) in enumerate(zip(sel.ordered_features, sel.rmse_path))
    ]


def alm_reference(cfg: ExperimentConfig, problem=None) -> float:
    """Nested value with M ~ budget^(2/3) outer and K ~ budget^(1/3) inner draws."""
    problem = problem or _alm_problem(cfg)
    M = max(1, round(cfg.budget ** (2.0 / 3.0)))
    K = max(1, round(cfg.budget ** (1.0 / 3.0)))
    return nested_estimate(problem, scr_aggregators()["int"], M, K, derive_seed(cfg.seed, 999)).value


def alm_rmse(cfg: ExperimentConfig):
    o = cfg.options
    problem = _alm_problem(cfg)
    agg = scr_aggregators()["int"]
    ref = alm_reference(cfg, problem)
    rows = []
    for i, eps in enumerate(o["eps_list"]):
        sched = schedule_antithetic(EstimatorConfig(epsilon=eps, eta=o["eta"], K0=o["K0"]))
        reps = [
            antithetic_mlmc_estimate(problem, [agg], sched, derive_seed(cfg.seed, 1, i, b))[0]
            for b in range(cfg.n_batch)
        ]
        vals = [r.value for r in reps]
        rows.append(("antithetic", eps, reps[0].total_cost, _rmse(vals, ref), float(np.mean(vals)), ref, cfg.seed))
    chosen = _selection(cfg).ordered_features
    for d in range(1, len(chosen) + 1):
        cols = chosen[:d]
        for i, J in enumerate(o["J_list"]):
            n_r = _n_r(J, d, o["c_r"])
            reps = [
                lsmc_estimate(
                    problem,
                    lambda outer: outer_risk_factors(outer)[:, cols],
                    J,
                    n_r,
                    derive_seed(cfg.seed, 2, d, i, b),
                    agg,
                )
                for b in range(cfg.n_batch)
            ]
            vals = [r.value for r in reps]
            rows.append(
                (f"lsmc-{d}", J, reps[0].total_cost, _rmse(vals, ref), float(np.mean(vals)), ref, cfg.seed)
            )
    return rows


def alm_eta(cfg: ExperimentConfig):
    o = cfg.options
    problem = _alm_problem(cfg)
    agg = scr_aggregators()["int"]
    ref = alm_reference(cfg, problem)
    rows = []
    for k, eta in enumerate(o["eta_list"]):
        for i, eps in enumerate(o["eps_list"]):
            sched = schedule_antithetic(EstimatorConfig(epsilon=eps, eta=eta, K0=o["K0"]))
            reps = [
                antithetic_mlmc_estimate(problem, [agg], sched, derive_seed(cfg.seed, k, i, b))[0]
                for b in range(cfg.n_batch)
            ]
            vals = [r.value for r in reps]
            rows.append((eta, eps, reps[0].total_cost, _rmse(vals, ref), float(np.mean(vals)), ref, cfg.seed))
    return rows


def alm_frontier(cfg: ExperimentConfig):
    """Every SCR module from one shared antithetic run per (t, w_S)."""
    o = cfg.options
    aggs = scr_aggregators()
    sched = schedule_antithetic(EstimatorConfig(epsilon=o["epsilon"], eta=o["eta"], K0=o["K0"]))
    rows = []
    for t in o["t_list"]:
        for w in o["w_grid"]:
            problem = _alm_problem(cfg, t, w_S=w)
            reports = antithetic_mlmc_estimate(problem, list(aggs.values()), sched, cfg.seed)
            for name, rep in zip(aggs, reports):
                rows.append((t, w, name, rep.value, rep.std_error, cfg.seed))
    return rows


def alm_sensitivity(cfg: ExperimentConfig):
    o = cfg.options
    agg = scr_aggregators()["mkt"]
    sched = schedule_antithetic(EstimatorConfig(epsilon=o["epsilon"], eta=o["eta"], K0=o["K0"]))

    def estimate(problem):
        return antithetic_mlmc_estimate(problem, [agg], sched, cfg.seed)[0].value

    rows = []
    for bump, delta in (("S0", o["dS0"]), ("r0", o["dr0"])):
        d, base, bumped = sensitivity(bump, delta, estimate, cfg.alm, cfg.market, o["t"])
        rows.append((bump, delta, d, base, bumped, cfg.seed))
    return rows


def alm_premia(cfg: ExperimentConfig):
    """E^P of SCR modules by reweighting one set of pricing-measure scenarios."""
    o = cfg.options
    J, K = o["J"], o["K"]
    rows = []
    for t in o["t_list"]:
        problem = scr_problem(t, cfg.alm, replace(cfg.market, lambda_W=0.0, lambda_Z=0.0))
        rngs = streams(cfg.seed, 0, 0, J)
        outer = problem.sample_outer(rngs)
        rep = scr_report(np.asarray(problem.sample_inner(outer, rngs, K)).mean(axis=1))
        normals = np.stack([r.standard_normal((t, 3)) for r in streams(cfg.seed, 0, 0, J)])
        for premium, module, values in (("lambda_Z", "int", rep.scr_int), ("lambda_W", "eq", rep.scr_eq)):
            for lam in o[f"{premium}_list"]:
                market = replace(cfg.market, **{premium: lam})
                L = simulate_paths(market, normals).L[:, t] if t > 0 else np.ones(J)
                z = L * values
                se = float(np.std(z, ddof=1) / math.sqrt(J)) if J > 1 else 0.0
                rows.append((t, premium, lam, module, float(np.mean(z)), se, cfg.seed))
    return rows


RUNNERS = {
    "toy-bias": toy_bias,
    "toy-levelvar": toy_levelvar,
    "toy-rmse": toy_rmse,
    "toy-lsmc": toy_lsmc,
    "alm-select": alm_select,
    "alm-rmse": alm_rmse,
    "alm-eta": alm_eta,
    "alm-frontier": alm_frontier,
    "alm-sensitivity": alm_sensitivity,
    "alm-premia": alm_premia,
}


# --------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def format_csv(columns, rows) -> str:
    lines = [",".join(columns)]
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"row has {len(row)} fields, header has {len(columns)}")
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def run(cfg: ExperimentConfig) -> tuple[Path, Path]:
    """Run one experiment and write <experiment>.csv and its manifest."""
    if cfg.experiment not in RUNNERS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}")
    rows = RUNNERS[cfg.experiment](cfg)
    columns = COLUMNS[cfg.experiment]
    text = format_csv(columns, rows)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{cfg.experiment}.csv"
    csv_path.write_text(text)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "columns": list(columns),
        "csv": csv_path.name,
        "csv_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "config": cfg.resolved(),
        "versions": {
            "scr_mlmc": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    man_path = out / f"{cfg.experiment}.manifest.json"
    man_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return csv_path, man_path
