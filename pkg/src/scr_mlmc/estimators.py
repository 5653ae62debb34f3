"""Nested, multilevel and antithetic multilevel estimators of
``E[h(E[Y^1|X], ..., E[Y^P|X]) phi(X)]``.

Problems are described by vectorised samplers: ``sample_outer`` receives one
generator per outer scenario and returns a batch of outer samples,
``sample_inner`` continues each scenario's generator to draw ``K`` inner
samples and returns an array of shape ``(n, K, P)``. Aggregators act on the
last axis of an array of per-component means, so several aggregators can be
evaluated on the same simulations at no extra cost.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError
from .rng import streams


@dataclass(frozen=True)
class Aggregator:
    apply: Callable[[np.ndarray], np.ndarray]
    label: str

    def __call__(self, means: np.ndarray) -> np.ndarray:
        return self.apply(np.asarray(means, dtype=float))


def max_aggregator() -> Aggregator:
    return Aggregator(lambda m: np.max(m, axis=-1), "max")


def positive_max_aggregator() -> Aggregator:
    """max(E^1, ..., E^P, 0): the maximum with an appended zero coordinate."""
    return Aggregator(lambda m: np.maximum(np.max(m, axis=-1), 0.0), "max+")


def component_aggregator(p: int = 0) -> Aggregator:
    return Aggregator(lambda m: m[..., p], f"component[{p}]")


@dataclass(frozen=True)
class NestedProblem:
    """Samplers for X and Y|X together with the outer weight.

    ``max_batch_draws`` bounds ``n * K`` per sampler call; it only controls
    memory, never the numbers produced.
    """

    n_components: int
    sample_outer: Callable[[Sequence[np.random.Generator]], Any]
    sample_inner: Callable[[Any, Sequence[np.random.Generator], int], np.ndarray]
    weight: Callable[[Any], np.ndarray]
    inner_cost_hint: float = 1.0
    max_batch_draws: int = 1 << 18
    label: str = "problem"


@dataclass(frozen=True)
class EstimatorConfig:
    epsilon: float
    eta: float = 1.0
    K0: int = 2

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0.0 < self.eta <= 1.0:
            raise ConfigError(f"eta must lie in (0, 1], got {self.eta}")
        if self.K0 < 2 or self.K0 % 2:
            raise ConfigError(f"K0 must be an even integer >= 2, got {self.K0}")


@dataclass(frozen=True)
class LevelSchedule:
    K: tuple[int, ...]
    J: tuple[int, ...]

    def __post_init__(self):
        if len(self.K) != len(self.J) or not self.K:
            raise ConfigError("K and J must be non-empty and of equal length")
        if any(j < 1 for j in self.J) or self.K[0] < 1:
            raise ConfigError("all J_l and K_0 must be positive")
        for l in range(1, len(self.K)):
            if self.K[l] != 2 * self.K[l - 1]:
                raise ConfigError(f"K_l must double per level, got K={self.K}")

    @property
    def L(self) -> int:
        return len(self.K) - 1

    def cost(self, inner_cost_hint: float = 1.0) -> float:
        return float(sum(j * k for j, k in zip(self.J, self.K))) * inner_cost_hint


@dataclass(frozen=True)
class LevelRecord:
    l: int
    J: int
    K: int
    mean: float
    variance: float


@dataclass
class EstimatorReport:
    value: float
    std_error: float
    total_cost: float
    levels: list[LevelRecord] = field(default_factory=list)
    seed: int = 0
    label: str = ""


def _ceil(x: float) -> int:
    # absorbs round-off on exact powers of two
    return math.ceil(x - 1e-9 * max(1.0, abs(x)))


def _n_levels(config: EstimatorConfig) -> int:
    return _ceil(2.0 / (1.0 + config.eta) * abs(math.log2(config.epsilon)))


def schedule_plain(config: EstimatorConfig) -> LevelSchedule:
    """Level schedule of the plain multilevel estimator (cost O(eps^-2 log^2 eps))."""
    L = _n_levels(config)
    log_eps = abs(math.log(config.epsilon))
    J0 = 2 ** _ceil(2.0 * abs(math.log2(config.epsilon)) + abs(math.log2(log_eps)))
    J = tuple(max(1, J0 >> l) for l in range(L + 1))
    K = tuple(config.K0 << l for l in range(L + 1))
    return LevelSchedule(K=K, J=J)


def schedule_antithetic(config: EstimatorConfig) -> LevelSchedule:
    """Level schedule of the antithetic estimator (cost O(eps^-2))."""
    L = _n_levels(config)
    J0 = 2 ** _ceil(2.0 * abs(math.log2(config.epsilon)))
    rate = 1.0 + config.eta / 4.0
    J = tuple([J0] + [max(1, _ceil(J0 * 2.0 ** (-rate * l))) for l in range(1, L + 1)])
    K = tuple(config.K0 << l for l in range(L + 1))
    return LevelSchedule(K=K, J=J)


def antithetic_h(x, y):
    """((x+y)/2)^+ - (x^+ + y^+)/2, equal to -min(|x|,|y|)/2 when xy <= 0, else 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.maximum((x + y) / 2.0, 0.0) - (np.maximum(x, 0.0) + np.maximum(y, 0.0)) / 2.0
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# sampling kernels


def _chunks(problem: NestedProblem, J: int, K: int):
    step = max(1, problem.max_batch_draws // max(K, 1))
    for start in range(0, J, step):
        yield start, min(J, start + step)


def _draw(problem: NestedProblem, seed: int, level: int, start: int, stop: int, K: int):
    rngs = streams(seed, level, start, stop)
    outer = problem.sample_outer(rngs)
    y = np.asarray(problem.sample_inner(outer, rngs, K), dtype=float)
    if y.shape != (stop - start, K, problem.n_components):
        raise ValueError(
            f"sample_inner returned shape {y.shape}, expected "
            f"{(stop - start, K, problem.n_components)}"
        )
    w = np.asarray(problem.weight(outer), dtype=float).reshape(stop - start)
    return outer, y, w


def _level_summands(
    problem: NestedProblem,
    aggs: Sequence[Aggregator],
    level: int,
    J: int,
    K: int,
    seed: int,
    kind: str,
) -> np.ndarray:
    """Per-scenario summands, shape (len(aggs), J).

    kind: "nested" -> h(full means) phi; "plain" -> [h(full) - h(first half)] phi;
    "antithetic" -> [h(full) - (h(first half) + h(second half))/2] phi.
    """
    out = np.empty((len(aggs), J))
    half = K // 2
    for start, stop in _chunks(problem, J, K):
        _, y, w = _draw(problem, seed, level, start, stop, K)
        if kind == "nested":
            full = y.mean(axis=1)
            for a, agg in enumerate(aggs):
                out[a, start:stop] = agg(full) * w
            continue
        s1 = y[:, :half].sum(axis=1)
        s2 = y[:, half:].sum(axis=1)
        m1 = s1 / half
        m2 = s2 / half
        # built from the half means so a linear aggregator cancels exactly
        full = 0.5 * (m1 + m2)
        for a, agg in enumerate(aggs):
            if kind == "plain":
                corr = agg(full) - agg(m1)
            else:
                corr = agg(full) - 0.5 * (agg(m1) + agg(m2))
            out[a, start:stop] = corr * w
    return out


def _var(x: np.ndarray) -> float:
    return float(np.var(x, ddof=1)) if x.size > 1 else 0.0


def nested_estimate(
    problem: NestedProblem, agg: Aggregator, J: int, K: int, seed: int = 0
) -> EstimatorReport:
    """Two-stage estimator with J outer scenarios and K inner draws each."""
    if J < 1 or K < 1:
        raise ConfigError(f"J and K must be positive, got J={J}, K={K}")
    z = _level_summands(problem, [agg], 0, J, K, seed, "nested")[0]
    mean = float(np.sum(z) / J)
    var = _var(z)
    return EstimatorReport(
        value=mean,
        std_error=math.sqrt(var / J),
        total_cost=float(J * K) * problem.inner_cost_hint,
        levels=[LevelRecord(0, J, K, mean, var)],
        seed=seed,
        label=f"nested[{agg.label}]",
    )


def _multilevel(problem, aggs, schedule: LevelSchedule, seed: int, kind: str, name: str):
    if not isinstance(schedule, LevelSchedule):
        raise ConfigError("schedule must be a LevelSchedule")
    if schedule.L >= 1 and schedule.K[0] % 2:
        raise ConfigError("K_0 must be even for multilevel corrections")
    per_level = []
    for l, (J, K) in enumerate(zip(schedule.J, schedule.K)):
        per_level.append(
            _level_summands(problem, aggs, l, J, K, seed, "nested" if l == 0 else kind)
        )
    reports = []
    cost = schedule.cost(problem.inner_cost_hint)
    for a, agg in enumerate(aggs):
        records = []
        for l, z in enumerate(per_level):
            J = schedule.J[l]
            records.append(LevelRecord(l, J, schedule.K[l], float(np.sum(z[a]) / J), _var(z[a])))
        value = float(sum(r.mean for r in records))
        err = math.sqrt(sum(r.variance / r.J for r in records))
        reports.append(EstimatorReport(value, err, cost, records, seed, f"{name}[{agg.label}]"))
    return reports


def mlmc_estimate(
    problem: NestedProblem, agg: Aggregator, schedule: LevelSchedule, seed: int = 0
) -> EstimatorReport:
    """Plain multilevel estimator; coarse level reuses the first K_{l-1} draws."""
    return _multilevel(problem, [agg], schedule, seed, "plain", "mlmc")[0]


def antithetic_mlmc_estimate(
    problem: NestedProblem,
    aggs: Aggregator | Sequence[Aggregator],
    schedule: LevelSchedule,
    seed: int = 0,
) -> list[EstimatorReport]:
    """Antithetic multilevel estimator, one report per aggregator.

    All aggregators see the same simulated draws.
    """
    if isinstance(aggs, Aggregator):
        aggs = [aggs]
    return _multilevel(problem, list(aggs), schedule, seed, "antithetic", "mlmc-anti")


@dataclass(frozen=True)
class DiagnosticRow:
    K: int
    bias_proxy: float
    bias_stderr: float
    var_plain: float
    var_antithetic: float


def _gradient(agg: Aggregator, m: np.ndarray) -> np.ndarray:
    # central differences; exact for piecewise-linear h away from its kinks
    step = 1e-7 * np.maximum(1.0, np.abs(m))
    g = np.empty_like(m)
    for p in range(m.shape[-1]):
        e = np.zeros_like(m)
        e[..., p] = step[..., p]
        g[..., p] = (agg(m + e) - agg(m - e)) / (2.0 * step[..., p])
    return g


def level_diagnostics(
    problem: NestedProblem,
    agg: Aggregator,
    K_list: Sequence[int],
    J: int,
    seed: int,
    reference: float | Callable[[Any], np.ndarray],
) -> list[DiagnosticRow]:
    """Bias and level-variance profile over a grid of inner sample sizes.

    ``reference`` is either the target value I, or a callable returning the
    exact conditional means E[Y|X], shape (n, P), for a batch of outer
    samples. With the callable, the bias is estimated scenario by scenario as
    h(M_K) - h(m) - grad h(m).(M_K - m): the subtracted term has zero
    conditional mean and removes most of the sampling noise.
    """
    rows = []
    for i, K in enumerate(K_list):
        if K < 2 or K % 2:
            raise ConfigError(f"inner sizes must be even, got K={K}")
        bias = np.empty(J)
        plain = np.empty(J)
        anti = np.empty(J)
        half = K // 2
        for start, stop in _chunks(problem, J, K):
            outer, y, w = _draw(problem, seed, i, start, stop, K)
            s1 = y[:, :half].sum(axis=1)
            s2 = y[:, half:].sum(axis=1)
            mean_K = (s1 + s2) / K
            full, m1, m2 = agg(mean_K), agg(s1 / half), agg(s2 / half)
            if callable(reference):
                m = np.asarray(reference(outer), dtype=float).reshape(mean_K.shape)
                linear = np.sum(_gradient(agg, m) * (mean_K - m), axis=-1)
                bias[start:stop] = (full - agg(m) - linear) * w
            else:
                bias[start:stop] = full * w
            plain[start:stop] = (full - m1) * w
            anti[start:stop] = (full - 0.5 * (m1 + m2)) * w
        b = float(np.sum(bias) / J)
        if not callable(reference):
            b -= float(reference)
        rows.append(DiagnosticRow(K, b, math.sqrt(_var(bias) / J), _var(plain), _var(anti)))
    return rows
