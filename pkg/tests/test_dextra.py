import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delight.autodiff import Tensor
from delight.dextra import (ConfigError, Dextra, DextraConfig, DextraPlan, group_schedule, round_half_up,
                            width_schedule)
from delight.nn import Module


def test_group_schedule_examples():
    assert group_schedule(8, 8) == [1, 2, 4, 8, 8, 4, 2, 1]
    assert group_schedule(4, 8) == [1, 2, 2, 1]
    assert group_schedule(2, 1) == [1, 1]
    with pytest.raises(ConfigError):
        group_schedule(1, 4)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 12), st.integers(1, 32))
def test_group_schedule_invariants(N, g_max):
    g = group_schedule(N, g_max)
    assert len(g) == N and g[0] == 1 and g[-1] == 1
    assert max(g) <= g_max
    if N % 2 == 0:
        assert g == g[::-1]
    half = math.ceil(N / 2)
    assert g[:half] == sorted(g[:half])


def test_width_schedule_example():
    specs = width_schedule(DextraConfig(64, 32, 4, 2))
    assert [s.out_dim for s in specs] == [96, 128, 80, 32]
    assert [s.in_dim for s in specs] == [64, 64 + 96, 64 + 128, 64 + 80]


def test_flat_schedule():
    specs = width_schedule(DextraConfig(48, 47, 2, 1, g_max=1))
    assert [s.out_dim for s in specs] == [48, 47]


def test_round_half_up():
    assert [round_half_up(x) for x in (Fraction(1, 2), Fraction(3, 2), Fraction(5, 2), 2.4999)] == [1, 2, 3, 2]


def test_indivisible_config_lists_groups():
    with pytest.raises(ConfigError, match=r"\[4\]"):
        width_schedule(DextraConfig(62, 32, 6, 2, g_max=4))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 10), st.sampled_from([32, 64, 128]), st.sampled_from([1, 2, 4, 8]),
       st.sampled_from([Fraction(1), Fraction(3, 2), Fraction(2), Fraction(3)]))
def test_width_schedule_invariants(N, d_m, g_max, m_w):
    cfg = DextraConfig(d_m, d_m // 2, N, m_w, g_max=g_max)
    specs = width_schedule(cfg)
    groups = group_schedule(N, g_max)
    assert specs[-1].out_dim == d_m // 2 and specs[0].in_dim == d_m
    for l, s in enumerate(specs):
        assert s.groups == groups[l]
        assert s.in_dim % s.groups == 0 and s.out_dim % s.groups == 0
        if l + 1 < N:
            assert s.out_dim % groups[l + 1] == 0
            assert specs[l + 1].in_dim == d_m + s.out_dim


def _identity_extend(layer, rows_from: int):
    w = np.zeros_like(layer.weight.data)
    k, n = w.shape[1:]
    w[0, rows_from:rows_from + min(k - rows_from, n), :min(k - rows_from, n)] = np.eye(min(k - rows_from, n))
    layer.weight.data[:] = w
    layer.bias.data[:] = 0


def test_dense_case_matches_two_layer_mlp():
    from scipy.special import erf

    rng = np.random.default_rng(3)
    unit = Dextra.from_config(DextraConfig(8, 4, 2, 1, g_max=1), rng)
    x = rng.normal(size=(5, 8))
    w1, b1 = unit.layers[0].weight.data[0], unit.layers[0].bias.data[0]
    w2, b2 = unit.layers[1].weight.data[0], unit.layers[1].bias.data[0]
    h = x @ w1 + b1
    h = 0.5 * h * (1 + erf(h / math.sqrt(2)))
    expected = np.concatenate([h, x], axis=-1) @ w2 + b2
    assert np.allclose(unit(Tensor(x)).data, expected, rtol=0, atol=1e-12)


def test_zero_in_zero_out():
    unit = Dextra.from_config(DextraConfig(32, 16, 4, 2, g_max=2), np.random.default_rng(0))
    for layer in unit.layers:
        layer.bias.data[:] = 0
    assert np.array_equal(unit(Tensor(np.zeros((3, 32)))).data, np.zeros((3, 16)))


def test_parameter_count_matches_plan():
    cfg = DextraConfig(64, 32, 6, 2, g_max=4)
    unit = Dextra.from_config(cfg, np.random.default_rng(0))
    assert unit.num_parameters() == DextraPlan.build(cfg).params


def test_shuffle_flag_changes_output_only_with_grouped_neighbours():
    def out(shuffle, g_max):
        unit = Dextra.from_config(DextraConfig(32, 16, 6, 2, g_max=g_max, shuffle=shuffle), np.random.default_rng(0))
        return unit(Tensor(np.random.default_rng(1).normal(size=(2, 32)))).data

    assert not np.allclose(out(True, 4), out(False, 4))
    assert np.array_equal(out(True, 1), out(False, 1))


def test_dextra_is_a_module():
    assert isinstance(Dextra.from_config(DextraConfig(16, 8, 2), np.random.default_rng(0)), Module)
