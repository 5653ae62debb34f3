"""A finite nested problem whose estimator expectations are known exactly.

X takes 4 values; given X, two components take 3 values each
(independently) and a third is identically 0. Every expectation needed by
the tests is a finite sum over atoms and multinomial counts.
"""

from __future__ import annotations

import math

import numpy as np

from scr_mlmc.estimators import NestedProblem

X_PROB = np.array([0.1, 0.2, 0.3, 0.4])
WEIGHT = np.array([1.0, 0.8, 1.2, 1.0])
ATOMS = np.array([[-1.0, 0.0, 2.0], [-0.5, 0.5, 1.0]])
PROBS = np.array(
    [
        [[0.3, 0.4, 0.3], [0.2, 0.3, 0.5]],
        [[0.5, 0.3, 0.2], [0.5, 0.3, 0.2]],
        [[0.2, 0.3, 0.5], [0.1, 0.2, 0.7]],
        [[0.6, 0.2, 0.2], [0.6, 0.3, 0.1]],
    ]
)


def h(m):
    return np.max(m, axis=-1)


def problem(max_batch_draws: int = 1 << 18) -> NestedProblem:
    cum_x = np.cumsum(X_PROB)
    cum_y = np.cumsum(PROBS, axis=-1)

    def sample_outer(rngs):
        u = np.fromiter((r.random() for r in rngs), float, len(rngs))
        return np.minimum(np.searchsorted(cum_x, u, side="right"), 3).astype(float)

    def sample_inner(x, rngs, K):
        idx = x.astype(int)
        u = np.stack([r.random((K, 2)) for r in rngs]) if rngs else np.empty((0, K, 2))
        k = np.minimum((u[..., None] >= cum_y[idx][:, None, :, :]).sum(axis=-1), 2)
        y = np.zeros(u.shape[:2] + (3,))
        y[..., :2] = ATOMS[np.arange(2), k]
        return y

    return NestedProblem(
        n_components=3,
        sample_outer=sample_outer,
        sample_inner=sample_inner,
        weight=lambda x: WEIGHT[x.astype(int)],
        max_batch_draws=max_batch_draws,
        label="discrete",
    )


def conditional_means() -> np.ndarray:
    """E[Y | X = x] for each atom, shape (4, 3)."""
    m = np.zeros((4, 3))
    m[:, :2] = np.sum(PROBS * ATOMS[None], axis=-1)
    return m


def exact_value() -> float:
    return float(np.sum(X_PROB * WEIGHT * h(conditional_means())))


def _count_table(K: int):
    """All (a, b, c) with a + b + c = K and their multinomial log-coefficients."""
    rows = [(a, b, K - a - b) for a in range(K + 1) for b in range(K + 1 - a)]
    counts = np.array(rows, dtype=float)
    logc = np.array([math.lgamma(K + 1) - sum(math.lgamma(v + 1) for v in r) for r in rows])
    return counts, logc


def exact_nested_mean(K: int) -> float:
    """E[h(M_K) phi(X)] where M_K is the mean of K inner draws."""
    counts, logc = _count_table(K)
    total = 0.0
    for x in range(4):
        comps = []
        for p in range(2):
            with np.errstate(divide="ignore"):
                logp = logc + counts @ np.log(PROBS[x, p])
            comps.append((np.exp(logp), counts @ ATOMS[p] / K))
        total += X_PROB[x] * WEIGHT[x] * _expected_max(comps)
    return total


def _expected_max(comps) -> float:
    """E[max(A, B, 0)] for independent discrete A, B via the product of CDFs."""
    support = np.unique(np.concatenate([m for _, m in comps] + [np.zeros(1)]))
    support = support[support >= 0.0]
    F = np.ones_like(support)
    for prob, vals in comps:
        order = np.argsort(vals)
        cdf = np.cumsum(prob[order])
        pos = np.searchsorted(vals[order], support, side="right")
        F *= np.where(pos > 0, cdf[np.maximum(pos - 1, 0)], 0.0)
    jumps = np.diff(np.concatenate([[0.0], F]))
    return float(support @ jumps)
