import numpy as np
import pytest

from moe_offload.cache_model import (
    CostTable,
    build_cost_table,
    cost_single,
    cost_two,
    expected_cost,
    monte_carlo_cost,
    p_hit,
)
from moe_offload.core import DomainError, LayerProfile, ModelSpec


def test_p_hit():
    assert p_hit(4, 8) == 0.5
    assert p_hit(8, 8) == 1.0
    assert p_hit(0, 8) == 0.0
    with pytest.raises(DomainError):
        p_hit(9, 8)


def test_cost_single_examples():
    assert cost_single(8, 8, 0.3) == 0.0
    assert cost_single(0, 8, 0.0) == 1.0
    assert cost_single(4, 8, 0.9) == pytest.approx(0.05)


def test_cost_two_examples():
    assert cost_two(8, 8, 0.4).total == 0.0
    f2, f3, f4 = cost_two(0, 8, 0.0)
    assert (f2, f3, f4) == (2.0, 0.0, 0.0)
    f2, f3, f4 = cost_two(4, 8, 0.5)
    assert f2 == pytest.approx(3 / 14)
    assert f3 == pytest.approx(3 / 28)
    assert f4 == pytest.approx(2 / 7)


def test_expected_cost_examples():
    assert expected_cost(3, 8, 1.0, 0.4) == cost_single(3, 8, 0.4)
    assert expected_cost(8, 8, 0.3, 0.2) == 0.0
    assert expected_cost(4, 8, 0.5, 0.5) == pytest.approx(0.4286, abs=1e-4)
    with pytest.raises(DomainError):
        expected_cost(4, 8, 1.5, 0.5)


def test_cost_decreasing_in_cache_size():
    for n in (2, 4, 8):
        for alpha in (0.0, 0.3, 1.0):
            for beta in (0.0, 0.6):
                col = [expected_cost(t, n, alpha, beta) for t in range(n + 1)]
                assert all(a >= b for a, b in zip(col, col[1:]))


def test_mc_exact_cases():
    assert monte_carlo_cost(3, 8, 1.0, 1.0, samples=20_000).mean == 0.0
    assert monte_carlo_cost(8, 8, 0.4, 0.2, samples=20_000).mean == 0.0


def test_mc_agrees_with_closed_form():
    est = monte_carlo_cost(4, 8, 0.5, 0.5, samples=1_000_000, seed=5)
    assert abs(est.mean - expected_cost(4, 8, 0.5, 0.5)) < 3 * est.stderr


def test_mc_reproducible_and_worker_split():
    a = monte_carlo_cost(2, 4, 0.3, 0.5, samples=50_000, seed=1, workers=3)
    b = monte_carlo_cost(2, 4, 0.3, 0.5, samples=50_000, seed=1, workers=3)
    assert a == b
    assert a.samples == 50_000
    c = monte_carlo_cost(2, 4, 0.3, 0.5, samples=50_000, seed=1, workers=1, chunk=7_000)
    assert abs(c.mean - expected_cost(2, 4, 0.3, 0.5)) < 4 * c.stderr


def test_build_cost_table():
    spec = ModelSpec(2, 8, 2, 4)
    zero = build_cost_table([LayerProfile(1.0, 1.0, 1.0)] * 2, spec)
    assert np.all(zero.f == 0)
    one = build_cost_table([LayerProfile(0.0, 0.0, 1.0)], ModelSpec(1, 8, 2, 4)).f[0]
    assert np.all(np.diff(one) < 0)
    assert one[0] == 2.0
    with pytest.raises(DomainError):
        build_cost_table([LayerProfile(0, 0, 1)], spec)


def test_cost_table_rejects_bad_entries():
    with pytest.raises(DomainError):
        CostTable(np.array([[1.0, -0.1]]))
    t = CostTable(np.array([[2.0, 1.0, 0.0]]))
    assert t.total([1]) == 1.0
    with pytest.raises(ValueError):
        t.f[0, 0] = 3.0
