"""Expected on-demand expert loads per token as a function of per-layer cache size.

Cache contents are modelled as a uniformly random t-subset of the N experts.
A correct prefetch rescues at most one missing expert per layer per token.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import DomainError, LayerProfile, ModelSpec, SeededRng


def _check(t: int, n: int, beta: float | None = None, alpha: float | None = None) -> None:
    if n < 1:
        raise DomainError(f"expert count must be >= 1, got {n}")
    if not 0 <= t <= n:
        raise DomainError(f"cache size {t} out of [0, {n}]")
    if beta is not None and not 0.0 <= beta <= 1.0:
        raise DomainError(f"beta out of [0,1]: {beta}")
    if alpha is not None and not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha out of [0,1]: {alpha}")


def p_hit(t: int, n: int) -> float:
    _check(t, n)
    return t / n


def _both_miss(t: int, n: int) -> float:
    q = (n - t) * (n - t - 1) / (n * (n - 1))
    # the quadratic is nonnegative on integer 0 <= t <= n; the clamp never fires
    assert q >= 0.0, (t, n, q)
    return max(q, 0.0)


def cost_single(t: int, n: int, beta: float) -> float:
    _check(t, n, beta)
    return (1.0 - t / n) * (1.0 - beta)


class TwoExpertCost(NamedTuple):
    both_miss_wrong: float
    both_miss_one_prefetched: float
    one_hit_wrong: float

    @property
    def total(self) -> float:
        return self.both_miss_wrong + self.both_miss_one_prefetched + self.one_hit_wrong


def cost_two(t: int, n: int, beta: float) -> TwoExpertCost:
    _check(t, n, beta)
    if n < 2:
        raise DomainError("two-expert cost needs N >= 2")
    m = _both_miss(t, n)
    one_hit = 2 * (n - t) * t / (n * (n - 1))
    return TwoExpertCost(2.0 * m * (1.0 - beta), m * beta, one_hit * (1.0 - beta))


def expected_cost(t: int, n: int, alpha: float, beta: float) -> float:
    _check(t, n, beta, alpha)
    return alpha * cost_single(t, n, beta) + (1.0 - alpha) * cost_two(t, n, beta).total


@dataclass(frozen=True, eq=False)
class CostTable:
    """f[i][t]: expected on-demand loads per token at layer i with t cached experts."""

    f: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.f, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[1] < 1:
            raise DomainError(f"cost table must be 2-D with >= 1 column, got {arr.shape}")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise DomainError("cost table entries must be finite and nonnegative")
        arr.setflags(write=False)
        object.__setattr__(self, "f", arr)

    def __eq__(self, other) -> bool:
        return isinstance(other, CostTable) and np.array_equal(self.f, other.f)

    @property
    def num_layers(self) -> int:
        return self.f.shape[0]

    @property
    def max_cache(self) -> int:
        return self.f.shape[1] - 1

    def total(self, capacities: Sequence[int]) -> float:
        s = 0.0
        for i, t in enumerate(capacities):
            s += float(self.f[i, t])
        return s


def build_cost_table(profiles: Sequence[LayerProfile], spec: ModelSpec) -> CostTable:
    if len(profiles) != spec.num_layers:
        raise DomainError(f"{len(profiles)} profiles for {spec.num_layers} layers")
    n = spec.experts_per_layer
    rows = [
        [expected_cost(t, n, p.single_expert_prob, p.prefetch_accuracy) for t in range(n + 1)]
        for p in profiles
    ]
    return CostTable(np.array(rows))


class MCEstimate(NamedTuple):
    mean: float
    stderr: float
    samples: int


def _mc_chunk(rng: np.random.Generator, samples: int, t: int, n: int, alpha: float, beta: float):
    """Sum and sum of squares of the simulated per-token cost over one chunk."""
    # a uniform random t-subset: expert e is cached iff its key ranks among the t smallest
    keys = rng.random((samples, n))
    first = rng.integers(0, n, size=samples)
    two = rng.random(samples) >= alpha
    if n > 1:
        second = (first + 1 + rng.integers(0, n - 1, size=samples)) % n
    else:
        second = first
    prefetch_ok = rng.random(samples) < beta

    rows = np.arange(samples)
    rank_first = (keys < keys[rows, first][:, None]).sum(axis=1)
    rank_second = (keys < keys[rows, second][:, None]).sum(axis=1)
    miss = (rank_first >= t).astype(np.int64)
    miss += np.where(two, rank_second >= t, False)
    cost = miss - (prefetch_ok & (miss > 0))
    cost = cost.astype(np.float64)
    return float(cost.sum()), float(np.dot(cost, cost))


def monte_carlo_cost(
    t: int,
    n: int,
    alpha: float,
    beta: float,
    samples: int = 100_000,
    seed: int = 0,
    workers: int = 1,
    chunk: int = 250_000,
) -> MCEstimate:
    """Simulate the random-cache event model and return mean +- standard error.

    Samples are split evenly over ``workers`` streams derived from ``seed``;
    the result depends only on (seed, workers), not on thread timing.
    """
    _check(t, n, beta, alpha)
    if samples < 1:
        raise DomainError("samples must be >= 1")
    if workers < 1:
        raise DomainError("workers must be >= 1")
    rngs = SeededRng(seed).spawn(workers) if workers > 1 else [SeededRng(seed).generator()]
    shares = [samples // workers + (1 if w < samples % workers else 0) for w in range(workers)]

    def run(w: int) -> tuple[float, float]:
        s = ss = 0.0
        left = shares[w]
        while left > 0:
            m = min(chunk, left)
            a, b = _mc_chunk(rngs[w], m, t, n, alpha, beta)
            s += a
            ss += b
            left -= m
        return s, ss

    if workers == 1:
        parts = [run(0)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(workers)))
    total = math.fsum(p[0] for p in parts)
    total_sq = math.fsum(p[1] for p in parts)
    mean = total / samples
    if samples > 1:
        var = max(0.0, (total_sq - samples * mean * mean) / (samples - 1))
    else:
        var = 0.0
    return MCEstimate(mean, math.sqrt(var / samples), samples)
