import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delight.autodiff import Tensor, count_macs
from delight.grouped import GroupLinear, feature_shuffle, input_mixer, shuffle_permutation


def test_block_identity_example():
    layer = GroupLinear(4, 4, 2, np.random.default_rng(0))
    layer.weight.data[:] = np.stack([np.eye(2), 2 * np.eye(2)])
    layer.bias.data[:] = 0
    assert layer(Tensor([1.0, 2, 3, 4])).data.tolist() == [1, 2, 6, 8]


def test_dimension_mismatch_names_layer():
    with pytest.raises(ValueError, match="glt"):
        GroupLinear(6, 4, 4, np.random.default_rng(0))
    layer = GroupLinear(4, 4, 2, np.random.default_rng(0), name="probe")
    with pytest.raises(ValueError, match="probe"):
        layer(Tensor(np.ones(6)))


def test_shuffle_examples():
    assert feature_shuffle(Tensor([1.0, 2, 3, 4]), 2).data.tolist() == [1, 3, 2, 4]
    x = Tensor(np.arange(6.0))
    assert feature_shuffle(x, 1).data.tolist() == x.data.tolist()
    with pytest.raises(ValueError):
        feature_shuffle(Tensor(np.ones(6)), 4)


def test_mixer_examples():
    x, y = Tensor([5.0, 6, 7, 8]), Tensor([1.0, 3, 2, 4])
    assert input_mixer(x, y, 2).data.tolist() == [1, 3, 5, 6, 2, 4, 7, 8]
    assert input_mixer(x, y, 1).data.tolist() == [1, 3, 2, 4, 5, 6, 7, 8]
    assert input_mixer(x, y, 2, prev_groups=1).data.tolist() == [1, 3, 2, 4, 5, 6, 7, 8]
    with pytest.raises(ValueError):
        input_mixer(Tensor(np.ones(3)), y, 2)


def test_consumer_over_mixer_matches_per_group_oracle():
    rng = np.random.default_rng(1)
    g = 4
    x, y = rng.normal(size=(3, 8)), rng.normal(size=(3, 12))
    layer = GroupLinear(20, 8, g, rng)
    out = layer(input_mixer(Tensor(x), Tensor(y), g)).data
    for i in range(g):
        group_in = np.concatenate([y[:, 3 * i:3 * i + 3], x[:, 2 * i:2 * i + 2]], axis=-1)
        expected = group_in @ layer.weight.data[i] + layer.bias.data[i]
        assert np.allclose(out[:, 2 * i:2 * i + 2], expected, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_glt_equals_block_diagonal_dense(g, a, b, seed):
    rng = np.random.default_rng(seed)
    layer = GroupLinear(g * a, g * b, g, rng)
    x = rng.normal(size=(2, 3, g * a))
    dense = x @ layer.block_diagonal() + layer.bias.data.reshape(-1)
    assert np.allclose(layer(Tensor(x)).data, dense, rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_shuffle_inverse_and_multiset(g, k, seed):
    d = g * k
    x = np.random.default_rng(seed).normal(size=d)
    y = feature_shuffle(Tensor(x), g).data
    assert sorted(y.tolist()) == sorted(x.tolist())
    assert np.array_equal(feature_shuffle(Tensor(y), k).data, x)
    perm = shuffle_permutation(d, g)
    for i in range(g):
        for j in range(k):
            assert perm[j * g + i] == i * k + j


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_glt_macs_per_token(g, a, b):
    layer = GroupLinear(g * a, g * b, g, np.random.default_rng(0))
    with count_macs() as c:
        layer(Tensor(np.ones((5, g * a))))
    assert c.total == 5 * (g * a) * (g * b) // g
