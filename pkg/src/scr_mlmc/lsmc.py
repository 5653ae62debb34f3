"""Least-squares Monte-Carlo with indicator bases on hypercube cells.

The regression of single-draw targets on the indicators of a regular
partition reduces to per-cell sample means, so fitting and evaluation are
both a single O(J) pass.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ConfigError
from .estimators import (
    Aggregator,
    EstimatorReport,
    LevelRecord,
    NestedProblem,
    _chunks,
    _draw,
    _gradient,
    max_aggregator,
)
from .rng import streams


@dataclass(frozen=True)
class HypercubePartition:
    """Regular grid of n_r cells per axis over the box ``bounds``.

    Points are rescaled into [0, 1]^d and points outside the box are clamped
    into the boundary cells.
    """

    d: int
    n_r: int
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.d < 1 or self.n_r < 1:
            raise ConfigError("partition needs d >= 1 and n_r >= 1")
        if len(self.bounds) != self.d:
            raise ConfigError(f"expected {self.d} bounds, got {len(self.bounds)}")
        for lo, hi in self.bounds:
            if not hi > lo:
                raise ConfigError(f"degenerate bounds ({lo}, {hi})")

    @classmethod
    def from_data(cls, features: np.ndarray, n_r: int, pad: float = 0.01):
        """Bounds from the empirical range of each column, widened by ``pad``."""
        f = _as_matrix(features)
        lo, hi = f.min(axis=0), f.max(axis=0)
        width = hi - lo
        width = np.where(width > 0, width, np.maximum(np.abs(hi), 1.0))
        bounds = tuple(
            (float(a - pad * w), float(b + pad * w)) for a, b, w in zip(lo, hi, width)
        )
        return cls(d=f.shape[1], n_r=n_r, bounds=bounds)

    @property
    def n_cells(self) -> int:
        return self.n_r**self.d

    def axis_indices(self, features: np.ndarray) -> np.ndarray:
        f = _as_matrix(features, self.d)
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        scaled = (f - lo) / (hi - lo)
        return np.clip(np.floor(self.n_r * scaled), 0, self.n_r - 1).astype(np.int64)

    def cell_index(self, features: np.ndarray) -> np.ndarray:
        idx = self.axis_indices(features)
        strides = self.n_r ** np.arange(self.d, dtype=np.int64)
        return idx @ strides

    def cell_box(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper corner of cell n (in feature units)."""
        digits = np.array([(n // self.n_r**k) % self.n_r for k in range(self.d)])
        lo = np.array([b[0] for b in self.bounds])
        width = np.array([b[1] - b[0] for b in self.bounds]) / self.n_r
        return lo + digits * width, lo + (digits + 1) * width


def _as_matrix(features, d: int | None = None) -> np.ndarray:
    f = np.asarray(features, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if d is not None and f.shape[1] != d:
        raise ValueError(f"features have {f.shape[1]} columns, partition has d={d}")
    return f


@dataclass
class RegressionModel:
    partition: HypercubePartition
    alpha: np.ndarray
    gamma: np.ndarray
    counts: np.ndarray

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Fitted conditional means, shape (J, P)."""
        return self.alpha[self.partition.cell_index(features)]

    def predict_aggregate(self, features: np.ndarray) -> np.ndarray:
        return self.gamma[self.partition.cell_index(features)]


def fit_indicator_regression(
    features: np.ndarray,
    targets: np.ndarray,
    partition: HypercubePartition,
    agg: Aggregator | None = None,
) -> RegressionModel:
    """Per-cell means of the targets (0 in empty cells); gamma = agg(alpha)."""
    f = _as_matrix(features, partition.d)
    y = np.asarray(targets, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != f.shape[0]:
        raise ValueError(f"{f.shape[0]} feature rows but {y.shape[0]} target rows")
    if f.shape[0] < 1:
        raise ValueError("need at least one sample")
    if not np.all(np.isfinite(f)):
        raise ValueError("features must be finite")
    cells = partition.cell_index(f)
    counts = np.bincount(cells, minlength=partition.n_cells)
    alpha = np.empty((partition.n_cells, y.shape[1]))
    for p in range(y.shape[1]):
        alpha[:, p] = np.bincount(cells, weights=y[:, p], minlength=partition.n_cells)
    alpha = np.divide(alpha, counts[:, None], out=np.zeros_like(alpha), where=counts[:, None] > 0)
    agg = agg or max_aggregator()
    gamma = np.where(counts > 0, agg(alpha), 0.0)
    return RegressionModel(partition, alpha, gamma, counts)


def lsmc_estimate(
    problem: NestedProblem,
    feature_map: Callable[[Any], np.ndarray],
    J: int,
    partition: HypercubePartition | int,
    seed: int = 0,
    agg: Aggregator | None = None,
) -> EstimatorReport:
    """Regression estimator: one inner draw per scenario, fitted and evaluated in-sample.

    ``partition`` may be an integer n_r, in which case the bounds come from
    the sample. The reported std_error uses the influence function of the
    estimator, phi_j gamma(X_j) + phibar_cell grad h(alpha_cell).(Y_j - alpha_cell).
    """
    if J < 1:
        raise ConfigError("J must be positive")
    agg = agg or max_aggregator()
    feats, ys, ws = [], [], []
    for start, stop in _chunks(problem, J, 1):
        outer, y, w = _draw(problem, seed, 0, start, stop, 1)
        feats.append(_as_matrix(feature_map(outer)))
        ys.append(y[:, 0, :])
        ws.append(w)
    f, y, w = np.concatenate(feats), np.concatenate(ys), np.concatenate(ws)
    if isinstance(partition, int):
        partition = HypercubePartition.from_data(f, partition)
    model = fit_indicator_regression(f, y, partition, agg)
    cells = partition.cell_index(f)
    summands = w * model.gamma[cells]
    value = float(np.sum(summands) / J)

    wbar = np.bincount(cells, weights=w, minlength=partition.n_cells)
    wbar = np.divide(wbar, model.counts, out=np.zeros_like(wbar), where=model.counts > 0)
    grad = _gradient(agg, model.alpha)
    z = summands + wbar[cells] * np.sum(grad[cells] * (y - model.alpha[cells]), axis=1)
    var = float(np.var(z, ddof=1)) if J > 1 else 0.0
    return EstimatorReport(
        value=value,
        std_error=math.sqrt(var / J),
        total_cost=float(J) * problem.inner_cost_hint,
        levels=[LevelRecord(0, J, 1, value, var)],
        seed=seed,
        label=f"lsmc[{agg.label}, N_r={partition.n_cells}]",
    )


@dataclass
class SelectionResult:
    ordered_features: list[int]
    rmse_path: list[float]


def regression_rmse(features: np.ndarray, targets: np.ndarray, n_r: int) -> float:
    """In-sample RMSE of the indicator regression on a data-bounded grid."""
    f = _as_matrix(features)
    part = HypercubePartition.from_data(f, n_r)
    model = fit_indicator_regression(f, targets, part, Aggregator(lambda a: a[..., 0], "y"))
    resid = np.asarray(targets, dtype=float).reshape(-1) - model.predict(f)[:, 0]
    return float(np.sqrt(np.mean(resid**2)))


def forward_select(
    features: np.ndarray, targets: np.ndarray, n_r: int, max_vars: int
) -> SelectionResult:
    """Greedy forward selection on in-sample RMSE; ties go to the lowest index."""
    f = _as_matrix(features)
    F = f.shape[1]
    if F < 1:
        raise ConfigError("need at least one candidate feature")
    if not 1 <= max_vars <= F:
        raise ConfigError(f"max_vars must lie in [1, {F}], got {max_vars}")
    chosen: list[int] = []
    path: list[float] = []
    for _ in range(max_vars):
        best, best_rmse = -1, math.inf
        for c in range(F):
            if c in chosen:
                continue
            rmse = regression_rmse(f[:, chosen + [c]], targets, n_r)
            if rmse < best_rmse:
                best, best_rmse = c, rmse
        chosen.append(best)
        path.append(best_rmse)
    return SelectionResult(chosen, path)


def nested_targets(
    problem: NestedProblem,
    agg: Aggregator,
    scenarios: Any,
    K: int,
    seed: int = 0,
    level: int = 0,
) -> np.ndarray:
    """agg of the K-draw inner means for each given outer scenario."""
    if K < 1:
        raise ConfigError("K must be positive")
    n = len(scenarios)
    out = np.empty(n)
    for start, stop in _chunks(problem, n, K):
        batch = scenarios[start:stop]
        rngs = streams(seed, level, start, stop)
        y = np.asarray(problem.sample_inner(batch, rngs, K), dtype=float)
        out[start:stop] = agg(y.mean(axis=1))
    return out
