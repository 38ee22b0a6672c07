"""Per-layer expert cache sizing as a knapsack over expected on-demand loads."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .cache_model import CostTable
from .core import Allocation, DomainError, ModelSpec

MAX_ENUMERATION_BITS = 20


@dataclass(frozen=True, eq=False)
class DPState:
    F: np.ndarray  # (L+1) x (T+1) minimal cost of the first i layers with at most j slots
    choice: np.ndarray  # smallest argmin k per cell


def _check_table(costs: CostTable, spec: ModelSpec) -> None:
    expected = (spec.num_layers, spec.experts_per_layer + 1)
    if costs.f.shape != expected:
        raise DomainError(f"cost table shape {costs.f.shape} != {expected}")


def dp_table(costs: CostTable, budget: int) -> DPState:
    if budget < 0:
        raise DomainError(f"negative budget {budget}")
    f = costs.f
    L, n = f.shape[0], f.shape[1] - 1
    F = np.zeros((L + 1, budget + 1))
    choice = np.zeros((L + 1, budget + 1), dtype=np.int64)
    for i in range(1, L + 1):
        row = f[i - 1]
        prev = F[i - 1]
        for j in range(budget + 1):
            best_k = 0
            best = prev[j] + row[0]
            for k in range(1, min(j, n) + 1):
                c = prev[j - k] + row[k]
                if c < best:
                    best, best_k = c, k
            F[i, j] = best
            choice[i, j] = best_k
    return DPState(F, choice)


def dp_allocate(costs: CostTable, budget: int, spec: ModelSpec) -> tuple[Allocation, float]:
    """Minimise the summed per-layer cost subject to sum(t) <= budget, t_i <= N."""
    _check_table(costs, spec)
    state = dp_table(costs, budget)
    caps = [0] * spec.num_layers
    j = budget
    for i in range(spec.num_layers, 0, -1):
        k = int(state.choice[i, j])
        caps[i - 1] = k
        j -= k
    return Allocation(tuple(caps), budget), float(state.F[spec.num_layers, budget])


def brute_force_allocate(costs: CostTable, budget: int, spec: ModelSpec) -> tuple[Allocation, float]:
    """Exhaustive search; returns the lexicographically smallest optimal allocation."""
    _check_table(costs, spec)
    if budget < 0:
        raise DomainError(f"negative budget {budget}")
    L, n = spec.num_layers, spec.experts_per_layer
    if L * math.log2(n + 1) > MAX_ENUMERATION_BITS:
        raise DomainError(f"instance too large to enumerate: (N+1)^L = {(n + 1) ** L}")
    f = costs.f
    best_caps: tuple[int, ...] | None = None
    best = math.inf
    # itertools.product yields tuples in lexicographic order, so strict < keeps the first optimum
    for caps in itertools.product(range(n + 1), repeat=L):
        if sum(caps) > budget:
            continue
        total = 0.0
        for i, t in enumerate(caps):
            total = total + f[i, t]
        if total < best:
            best, best_caps = total, caps
    assert best_caps is not None
    return Allocation(best_caps, budget), float(best)
