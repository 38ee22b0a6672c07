"""Shared domain types for MoE offloading traces, profiles and allocations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SCORE_TOL = 1e-6


class DomainError(ValueError):
    """Raised when an input falls outside the domain of an operation."""


@dataclass(frozen=True)
class ModelSpec:
    num_layers: int
    experts_per_layer: int
    top_k: int
    hidden_dim: int

    def __post_init__(self) -> None:
        if self.num_layers < 1:
            raise DomainError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.experts_per_layer < 2:
            raise DomainError(f"experts_per_layer must be >= 2, got {self.experts_per_layer}")
        if not 1 <= self.top_k <= self.experts_per_layer:
            raise DomainError(f"top_k must be in [1, {self.experts_per_layer}], got {self.top_k}")
        if self.hidden_dim < 1:
            raise DomainError(f"hidden_dim must be >= 1, got {self.hidden_dim}")

    @classmethod
    def mixtral(cls, num_layers: int = 32, hidden_dim: int = 64) -> "ModelSpec":
        """Mixtral-shaped topology: 8 experts per layer, top-2 routing."""
        return cls(num_layers=num_layers, experts_per_layer=8, top_k=2, hidden_dim=hidden_dim)

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "experts_per_layer": self.experts_per_layer,
            "top_k": self.top_k,
            "hidden_dim": self.hidden_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(int(d["num_layers"]), int(d["experts_per_layer"]), int(d["top_k"]), int(d["hidden_dim"]))


@dataclass(frozen=True, order=True)
class ExpertRef:
    layer: int
    expert: int

    def check(self, spec: ModelSpec) -> None:
        if not 0 <= self.layer < spec.num_layers:
            raise DomainError(f"layer {self.layer} out of range [0, {spec.num_layers})")
        if not 0 <= self.expert < spec.experts_per_layer:
            raise DomainError(f"expert {self.expert} out of range [0, {spec.experts_per_layer})")


def ranked_experts(scores: Sequence[float]) -> list[int]:
    """Expert indices by descending score; ties go to the lowest index."""
    return sorted(range(len(scores)), key=lambda e: (-scores[e], e))


def top_k(scores: Sequence[float], k: int) -> tuple[int, ...]:
    return tuple(ranked_experts(scores)[:k])


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class GateRecord:
    """Post-softmax gate scores of one token at one layer and the experts it used."""

    scores: tuple[float, ...]
    selected: tuple[int, ...]

    @classmethod
    def from_scores(cls, scores: Iterable[float], k: int) -> "GateRecord":
        s = tuple(float(x) for x in scores)
        return cls(s, top_k(s, k))

    @property
    def top1(self) -> int:
        return ranked_experts(self.scores)[0]


@dataclass(frozen=True)
class LayerRecord:
    activation: tuple[float, ...]
    gate: GateRecord


@dataclass(frozen=True)
class TokenTrace:
    token_index: int
    layers: tuple[LayerRecord, ...]


@dataclass(frozen=True)
class LayerProfile:
    single_expert_prob: float
    prefetch_accuracy: float
    fisher_diag_sum: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.single_expert_prob <= 1.0:
            raise DomainError(f"single_expert_prob out of [0,1]: {self.single_expert_prob}")
        if not 0.0 <= self.prefetch_accuracy <= 1.0:
            raise DomainError(f"prefetch_accuracy out of [0,1]: {self.prefetch_accuracy}")
        if not self.fisher_diag_sum >= 0.0:
            raise DomainError(f"fisher_diag_sum must be >= 0: {self.fisher_diag_sum}")


@dataclass(frozen=True)
class Allocation:
    capacities: tuple[int, ...]
    budget: int

    def check(self, spec: ModelSpec) -> None:
        if len(self.capacities) != spec.num_layers:
            raise DomainError(
                f"allocation has {len(self.capacities)} layers, model has {spec.num_layers}"
            )
        for i, t in enumerate(self.capacities):
            if not 0 <= t <= spec.experts_per_layer:
                raise DomainError(f"capacity of layer {i} out of [0, {spec.experts_per_layer}]: {t}")
        if sum(self.capacities) > self.budget:
            raise DomainError(f"allocation uses {sum(self.capacities)} slots, budget is {self.budget}")

    @property
    def used(self) -> int:
        return sum(self.capacities)


def uniform_allocation(spec: ModelSpec, budget: int) -> Allocation:
    """Equal share per layer, leftover slots to the earliest layers."""
    if budget < 0:
        raise DomainError(f"negative budget {budget}")
    L, N = spec.num_layers, spec.experts_per_layer
    usable = min(budget, L * N)
    base, extra = divmod(usable, L)
    caps = tuple(min(N, base + (1 if i < extra else 0)) for i in range(L))
    return Allocation(caps, budget)


@dataclass(frozen=True)
class SeededRng:
    """numpy PCG64 stream; bit-stable across platforms for a given seed."""

    seed: int
    algorithm: str = field(default="PCG64", init=False)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, n: int) -> list[np.random.Generator]:
        children = np.random.SeedSequence(self.seed).spawn(n)
        return [np.random.Generator(np.random.PCG64(c)) for c in children]


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_trace(traces: Sequence[TokenTrace], spec: ModelSpec) -> ValidationReport:
    report = ValidationReport()
    bad = report.violations.append
    N, d, K = spec.experts_per_layer, spec.hidden_dim, spec.top_k
    for tok in traces:
        where = f"token {tok.token_index}"
        if len(tok.layers) != spec.num_layers:
            bad(f"{where}: layer count {len(tok.layers)} != {spec.num_layers}")
        for li, rec in enumerate(tok.layers):
            at = f"{where} layer {li}"
            if len(rec.activation) != d:
                bad(f"{at}: activation dim {len(rec.activation)} != {d}")
            if not all(math.isfinite(x) for x in rec.activation):
                bad(f"{at}: non-finite activation")
            scores = rec.gate.scores
            if len(scores) != N:
                bad(f"{at}: score length {len(scores)} != {N}")
            if any(s < 0 for s in scores):
                bad(f"{at}: negative score")
            if abs(math.fsum(scores) - 1.0) > SCORE_TOL:
                bad(f"{at}: score normalization (sum={math.fsum(scores):.9g})")
            sel = rec.gate.selected
            if len(sel) not in (1, K):
                bad(f"{at}: selected size {len(sel)} not in {{1, {K}}}")
            if len(set(sel)) != len(sel):
                bad(f"{at}: duplicate selected expert")
            if any(not 0 <= e < N for e in sel):
                bad(f"{at}: selected index out of range")
    return report


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise DomainError(f"dimension mismatch: {x.shape} vs {y.shape}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise DomainError("cosine similarity undefined for a zero vector")
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


def trace_arrays(traces: Sequence[TokenTrace]) -> tuple[np.ndarray, np.ndarray]:
    """Stack traces into (tokens, layers, d) activations and (tokens, layers, N) scores."""
    acts = np.array([[rec.activation for rec in t.layers] for t in traces], dtype=np.float64)
    scores = np.array([[rec.gate.scores for rec in t.layers] for t in traces], dtype=np.float64)
    return acts, scores
