import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from scr_mlmc.rng import derive_seed, stream, streams


def test_same_triple_same_draws():
    assert np.array_equal(stream(7, 2, 11).standard_normal(5), stream(7, 2, 11).standard_normal(5))


@given(st.integers(0, 2**32), st.integers(0, 20), st.integers(0, 10**6))
def test_neighbouring_streams_differ(seed, level, scenario):
    a = stream(seed, level, scenario).random(4)
    assert not np.array_equal(a, stream(seed, level, scenario + 1).random(4))
    assert not np.array_equal(a, stream(seed, level + 1, scenario).random(4))
    assert not np.array_equal(a, stream(seed + 1, level, scenario).random(4))


def test_streams_slice_is_position_independent():
    whole = [g.random() for g in streams(3, 0, 0, 10)]
    tail = [g.random() for g in streams(3, 0, 6, 10)]
    assert whole[6:] == tail


def test_derive_seed_is_stable_and_label_sensitive():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert len({derive_seed(1, i) for i in range(100)}) == 100
