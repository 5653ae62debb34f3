import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import discrete_oracle as oracle
from scr_mlmc.errors import ConfigError
from scr_mlmc.estimators import Aggregator, NestedProblem, max_aggregator
from scr_mlmc.lsmc import (
    HypercubePartition,
    fit_indicator_regression,
    forward_select,
    lsmc_estimate,
    nested_targets,
    regression_rmse,
)

IDENTITY = Aggregator(lambda a: a[..., 0], "y")


def unit(d, n_r):
    return HypercubePartition(d=d, n_r=n_r, bounds=((0.0, 1.0),) * d)


def test_hand_example_two_cells():
    m = fit_indicator_regression([0.1, 0.2, 0.9], [2.0, 4.0, 10.0], unit(1, 2), IDENTITY)
    assert m.alpha[:, 0].tolist() == [3.0, 10.0]
    assert m.counts.tolist() == [2, 1]


def test_empty_cell_predicts_zero():
    m = fit_indicator_regression([0.1, 0.2], [2.0, 4.0], unit(1, 4), IDENTITY)
    assert m.predict([0.9])[0, 0] == 0.0
    assert m.predict_aggregate([0.9])[0] == 0.0


@given(st.integers(1, 3), st.integers(1, 6), st.floats(-5, 5))
def test_constant_targets_are_reproduced(d, n_r, c):
    rng = np.random.default_rng(d * 7 + n_r)
    f = rng.random((50, d))
    m = fit_indicator_regression(f, np.full(50, c), unit(d, n_r), IDENTITY)
    assert np.allclose(m.predict(f)[:, 0], c)


@given(st.integers(1, 3), st.integers(1, 5))
def test_cell_index_covers_grid(d, n_r):
    part = unit(d, n_r)
    rng = np.random.default_rng(n_r)
    f = rng.uniform(-0.5, 1.5, (200, d))
    cells = part.cell_index(f)
    assert cells.min() >= 0 and cells.max() < part.n_cells
    inside = np.all((f >= 0) & (f < 1), axis=1)
    for x, c in zip(f[inside], cells[inside]):
        lo, hi = part.cell_box(int(c))
        assert np.all(lo <= x) and np.all(x < hi + 1e-12)


def test_partition_validation():
    with pytest.raises(ConfigError):
        HypercubePartition(d=1, n_r=0, bounds=((0.0, 1.0),))
    with pytest.raises(ConfigError):
        HypercubePartition(d=2, n_r=2, bounds=((0.0, 1.0),))
    with pytest.raises(ConfigError):
        HypercubePartition(d=1, n_r=2, bounds=((1.0, 1.0),))
    with pytest.raises(ValueError):
        unit(2, 2).cell_index(np.zeros((3, 1)))


def test_forward_select_finds_informative_feature():
    rng = np.random.default_rng(0)
    f = rng.random((2000, 8))
    y = np.floor(4 * f[:, 5]) + 0.01 * rng.standard_normal(2000)
    res = forward_select(f, y, n_r=4, max_vars=2)
    assert res.ordered_features[0] == 5
    assert res.rmse_path[0] < 0.2 * y.std()
    assert res.rmse_path[1] <= res.rmse_path[0] + 1e-12


def test_forward_select_single_feature_and_ties():
    f = np.linspace(0, 1, 40)[:, None]
    assert forward_select(f, f[:, 0], 4, 1).ordered_features == [0]
    dup = np.hstack([f, f, f])
    assert forward_select(dup, f[:, 0] ** 2, 4, 3).ordered_features == [0, 1, 2]
    with pytest.raises(ConfigError):
        forward_select(dup, f[:, 0], 4, 4)


def test_regression_rmse_zero_for_cellwise_constant():
    f = np.repeat([0.1, 0.6], 10)
    assert regression_rmse(f, np.repeat([1.0, 3.0], 10), 2) == 0.0


def deterministic_problem():
    def sample_inner(x, rngs, K):
        return np.broadcast_to(np.stack([x, -x], axis=-1)[:, None, :], (len(x), K, 2)).copy()

    return NestedProblem(
        n_components=2,
        sample_outer=lambda rngs: np.array([g.standard_normal() for g in rngs]),
        sample_inner=sample_inner,
        weight=lambda x: np.ones(len(x)),
    )


def test_nested_targets_deterministic_inner():
    x = np.array([-1.0, 0.5, 2.0])
    out = nested_targets(deterministic_problem(), max_aggregator(), x, K=5)
    assert out.tolist() == [1.0, 0.5, 2.0]
    with pytest.raises(ConfigError):
        nested_targets(deterministic_problem(), max_aggregator(), x, K=0)


def test_nested_targets_batching_invariant():
    prob_a, prob_b = oracle.problem(), oracle.problem(max_batch_draws=7)
    x = np.array([0.0, 1.0, 2.0, 3.0] * 5)
    a = nested_targets(prob_a, max_aggregator(), x, K=3, seed=2)
    b = nested_targets(prob_b, max_aggregator(), x, K=3, seed=2)
    assert np.array_equal(a, b)


def test_lsmc_on_discrete_oracle():
    # one cell per atom, so the regression is unbiased up to O(1/J)
    part = HypercubePartition(d=1, n_r=4, bounds=((-0.5, 3.5),))
    r = lsmc_estimate(oracle.problem(), lambda x: x, 200_000, part, seed=1)
    assert abs(r.value - oracle.exact_value()) < 3 * r.std_error
    assert r.std_error < 0.01


def test_lsmc_deterministic_inner_is_exact_on_fine_grid():
    r = lsmc_estimate(deterministic_problem(), lambda x: x, 500, 1, seed=0)
    assert r.value > 0
    with pytest.raises(ConfigError):
        lsmc_estimate(deterministic_problem(), lambda x: x, 0, 1)


@given(st.integers(1, 3), st.integers(1, 6), st.integers(0, 2**16))
def test_normal_equations_hold_per_cell(d, n_r, seed):
    rng = np.random.default_rng(seed)
    f = rng.random((300, d))
    y = rng.standard_normal((300, 2)) * 100.0
    part = unit(d, n_r)
    m = fit_indicator_regression(f, y, part, max_aggregator())
    cells = part.cell_index(f)
    for n in np.unique(cells):
        rows = y[cells == n]
        resid = np.sum(rows - m.alpha[n], axis=0)
        assert np.all(np.abs(resid) <= 1e-10 * np.sum(np.abs(rows), axis=0))


@given(st.integers(0, 2**16), st.floats(1e-6, 10.0), st.booleans())
def test_perturbing_a_coefficient_increases_loss(seed, delta, up):
    rng = np.random.default_rng(seed)
    f = rng.random(200)
    y = np.sin(6 * f) + rng.standard_normal(200)
    part = unit(1, 5)
    m = fit_indicator_regression(f, y, part, IDENTITY)
    cells = part.cell_index(f)
    loss = lambda a: float(np.sum((y - a[cells, 0]) ** 2))  # noqa: E731
    n = int(rng.choice(np.unique(cells)))
    bumped = m.alpha.copy()
    bumped[n, 0] += delta if up else -delta
    assert loss(bumped) > loss(m.alpha)


def test_cell_lookup_round_trips():
    part = HypercubePartition(d=3, n_r=7, bounds=((-1.0, 2.0), (0.0, 0.5), (10.0, 13.0)))
    rng = np.random.default_rng(3)
    lo = np.array([b[0] for b in part.bounds])
    hi = np.array([b[1] for b in part.bounds])
    f = lo + (hi - lo) * rng.random((100_000, 3))
    cells = part.cell_index(f)
    for n in np.unique(cells):
        a, b = part.cell_box(int(n))
        pts = f[cells == n]
        assert np.all(pts >= a) and np.all(pts < b)
