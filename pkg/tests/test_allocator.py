import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moe_offload.allocator import brute_force_allocate, dp_allocate
from moe_offload.cache_model import CostTable, build_cost_table
from moe_offload.core import DomainError, LayerProfile, ModelSpec


def test_zero_table_takes_nothing():
    spec = ModelSpec(3, 4, 2, 4)
    alloc, cost = dp_allocate(CostTable(np.zeros((3, 5))), 7, spec)
    assert alloc.capacities == (0, 0, 0) and cost == 0.0


def test_tiny_instance():
    spec = ModelSpec(2, 2, 2, 4)
    table = build_cost_table([LayerProfile(1.0, 1.0, 1.0), LayerProfile(1.0, 0.0, 1.0)], spec)
    assert list(table.f[0]) == [0.0, 0.0, 0.0]
    assert list(table.f[1]) == [1.0, 0.5, 0.0]
    alloc, cost = dp_allocate(table, 2, spec)
    assert alloc.capacities == (0, 2) and cost == 0.0
    assert brute_force_allocate(table, 2, spec) == (alloc, cost)


def test_unconstrained_budget_reaches_column_minimum():
    spec = ModelSpec(3, 4, 2, 4)
    table = build_cost_table([LayerProfile(0.2, 0.5, 1.0)] * 3, spec)
    alloc, cost = dp_allocate(table, 12, spec)
    assert cost == pytest.approx(sum(table.f[i, 4] for i in range(3)))
    assert alloc.capacities == (4, 4, 4)


def test_budget_zero_and_single_layer():
    spec = ModelSpec(2, 3, 2, 4)
    table = CostTable(np.array([[3.0, 2.0, 1.0, 0.5], [2.0, 1.5, 1.4, 1.3]]))
    assert brute_force_allocate(table, 0, spec)[0].capacities == (0, 0)
    one = ModelSpec(1, 3, 2, 4)
    col = CostTable(np.array([[3.0, 1.0, 1.0, 2.0]]))
    assert dp_allocate(col, 3, one)[0].capacities == (1,)
    assert brute_force_allocate(col, 3, one)[0].capacities == (1,)


def test_negative_budget_and_shape_errors():
    spec = ModelSpec(2, 3, 2, 4)
    table = CostTable(np.zeros((2, 4)))
    with pytest.raises(DomainError):
        dp_allocate(table, -1, spec)
    with pytest.raises(DomainError):
        dp_allocate(CostTable(np.zeros((3, 4))), 2, spec)
    with pytest.raises(DomainError):
        brute_force_allocate(CostTable(np.zeros((8, 9))), 2, ModelSpec(8, 8, 2, 4))


def test_cost_nonincreasing_in_budget():
    spec = ModelSpec(4, 8, 2, 4)
    rng = np.random.default_rng(0)
    profiles = [LayerProfile(rng.uniform(), rng.uniform(), 1.0) for _ in range(4)]
    table = build_cost_table(profiles, spec)
    costs = [dp_allocate(table, b, spec)[1] for b in range(0, 33)]
    assert all(a >= b - 1e-15 for a, b in zip(costs, costs[1:]))


@st.composite
def instances(draw):
    L = draw(st.integers(1, 4))
    N = draw(st.integers(2, 4))
    T = draw(st.integers(0, 10))
    cols = []
    for _ in range(L):
        steps = draw(st.lists(st.floats(0, 1, allow_nan=False), min_size=N, max_size=N))
        start = draw(st.floats(0, 3, allow_nan=False))
        col = [start]
        for s in steps:
            col.append(max(0.0, col[-1] - s))
        cols.append(col)
    return ModelSpec(L, N, min(2, N), 4), CostTable(np.array(cols)), T


@settings(max_examples=200, deadline=None)
@given(instances())
def test_dp_matches_brute_force(inst):
    spec, table, budget = inst
    a_dp, c_dp = dp_allocate(table, budget, spec)
    a_bf, c_bf = brute_force_allocate(table, budget, spec)
    assert abs(c_dp - c_bf) <= 1e-12
    a_dp.check(spec)
    assert table.total(a_dp.capacities) == pytest.approx(c_dp, abs=1e-12)
