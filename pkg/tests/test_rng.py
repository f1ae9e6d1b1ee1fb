import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgdchain import rng


@given(st.integers(0, 2**63 - 1), st.integers(0, 2**64 - 1))
def test_replica_seed_packs_and_unpacks(master, index):
    s = rng.replica_seed(master, index)
    assert s >> 64 == master and s & rng.MASK64 == index


@given(st.integers(0, 2**63 - 1), st.integers(0, 1000))
@settings(max_examples=25)
def test_stream_is_reproducible(master, index):
    s = rng.replica_seed(master, index)
    a = rng.stream(s).standard_normal(8)
    b = rng.stream(s).standard_normal(8)
    np.testing.assert_array_equal(a, b)


def test_streams_differ_across_replicas_and_channels():
    s0, s1 = rng.replica_seed(5, 0), rng.replica_seed(5, 1)
    a = rng.stream(s0).standard_normal(4)
    assert not np.array_equal(a, rng.stream(s1).standard_normal(4))
    assert not np.array_equal(a, rng.stream(s0, rng.INIT).standard_normal(4))


def test_seed_range_is_enforced():
    with pytest.raises(ValueError):
        rng.replica_seed(2**63, 0)
    with pytest.raises(ValueError):
        rng.replica_seed(-1, 0)


def test_derive_is_deterministic_and_tag_dependent():
    assert rng.derive(3, "a") == rng.derive(3, "a")
    assert rng.derive(3, "a") != rng.derive(3, "b")
    assert 0 <= rng.derive(2**63 - 1, "x") < 2**63
