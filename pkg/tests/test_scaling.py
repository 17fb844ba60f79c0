from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from delight.dextra import ConfigError
from delight.scaling import ScalingConfig, baseline_depth, blockwise_plan, network_depth, uniform_plan


def test_blockwise_example():
    plan = blockwise_plan(ScalingConfig(4, 8, 2, B=8))
    assert [s.N for s in plan] == [4, 5, 5, 6, 6, 7, 7, 8]
    assert plan[0].m_w == 2 and plan[-1].m_w == 3
    assert network_depth(plan) == 80


def test_default_B_is_N_max():
    assert len(blockwise_plan(ScalingConfig(4, 12))) == 12


def test_uniform_and_inverted():
    assert all((s.N, s.m_w) == (8, 2) for s in uniform_plan(8, 2, 8))
    assert network_depth(uniform_plan(8, 2, 8)) == 96
    inverted = [s.N for s in blockwise_plan(ScalingConfig(12, 4))]
    assert inverted == sorted(inverted, reverse=True) and inverted[0] == 12 and inverted[-1] == 4


def test_baseline_depth():
    assert baseline_depth(6) == 24
    assert baseline_depth(6, decoder=True) == 36


def test_single_block_and_errors():
    plan = blockwise_plan(ScalingConfig(4, 8, 2, B=1))
    assert [(s.N, s.m_w) for s in plan] == [(4, 2)]
    with pytest.raises(ConfigError):
        ScalingConfig(4, 8, 2, B=0)
    with pytest.raises(ConfigError):
        ScalingConfig(1, 4)


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12), st.integers(1, 16),
       st.sampled_from([Fraction(1), Fraction(2), Fraction(5, 2)]))
def test_plan_invariants(n_min, n_max, B, m_w):
    plan = blockwise_plan(ScalingConfig(n_min, n_max, m_w, B))
    assert len(plan) == B and plan[0].N == n_min and plan[0].m_w == m_w
    depths = [s.N for s in plan]
    assert depths == (sorted(depths) if n_max >= n_min else sorted(depths, reverse=True))
    if B > 1:
        assert plan[-1].N == n_max
        assert plan[-1].m_w == m_w + Fraction(n_max - n_min, n_min)
    assert network_depth(plan) == sum(depths) + 4 * B
