"""Expert prediction and prefetch planning.

Later layers are predicted by applying the next layer's own gate to the
current activation (gate reuse). The first layer of a token has no earlier
layer, so a small linear gate is trained to map the previous token's
last-layer activation onto the first layer's routing distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Container, Sequence

import numpy as np

from .core import DomainError, ExpertRef, LayerProfile, ModelSpec, TokenTrace, softmax
from .gating import gate_decide_sensitivity

MAX_LOOKAHEAD = 3


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GateMatrix:
    """d x N router weights of one layer."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = _frozen(self.weights)
        if w.ndim != 2:
            raise DomainError(f"gate matrix must be 2-D, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise DomainError("gate matrix has non-finite entries")
        object.__setattr__(self, "weights", w)

    def __eq__(self, other) -> bool:
        return isinstance(other, GateMatrix) and np.array_equal(self.weights, other.weights)

    def check(self, spec: ModelSpec) -> None:
        if self.weights.shape != (spec.hidden_dim, spec.experts_per_layer):
            raise DomainError(
                f"gate shape {self.weights.shape} != ({spec.hidden_dim}, {spec.experts_per_layer})"
            )

    def logits(self, activation) -> np.ndarray:
        a = np.asarray(activation, dtype=np.float64)
        if a.shape[-1] != self.weights.shape[0]:
            raise DomainError(f"activation dim {a.shape[-1]} != gate input dim {self.weights.shape[0]}")
        return a @ self.weights


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.1
    steps: int = 500
    seed: int = 0
    init_scale: float = 0.01

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "steps": self.steps,
            "seed": self.seed,
            "init_scale": self.init_scale,
        }


@dataclass(frozen=True, eq=False)
class PredictiveGate(GateMatrix):
    training_config: TrainingConfig = field(default_factory=TrainingConfig)
    loss_history: tuple[float, ...] = ()

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PredictiveGate)
            and np.array_equal(self.weights, other.weights)
            and self.training_config == other.training_config
        )


@dataclass(frozen=True)
class PlannedFetch:
    ref: ExpertRef
    source_layer: int
    depth: int


@dataclass(frozen=True)
class PrefetchPlan:
    items: tuple[PlannedFetch, ...] = ()

    @property
    def refs(self) -> list[ExpertRef]:
        return [it.ref for it in self.items]

    def __len__(self) -> int:
        return len(self.items)


def rank_by_logits(logits: np.ndarray) -> list[int]:
    # stable sort on negated logits: ties resolve to the lowest index
    return np.argsort(-np.asarray(logits), kind="stable").tolist()


def reuse_predict(
    activation,
    next_gate: GateMatrix,
    count: int | None = None,
    *,
    profile: LayerProfile | None = None,
    tau: float | None = None,
    spec: ModelSpec | None = None,
) -> list[int]:
    """Predict the next layer's experts from the current activation.

    With an explicit ``count`` the top-``count`` experts are returned. Otherwise
    the count comes from running the adaptive gating rule on the predicted
    scores (needs ``profile``, ``tau`` and ``spec``), falling back to the
    model's top-k.
    """
    logits = next_gate.logits(activation)
    n = logits.shape[-1]
    order = rank_by_logits(logits)
    if count is None:
        if spec is None:
            raise DomainError("reuse_predict needs either count or spec")
        count = spec.top_k
        if profile is not None and tau is not None:
            count = len(gate_decide_sensitivity(softmax(logits).tolist(), profile, tau, spec).selected)
    if not 1 <= count <= n:
        raise DomainError(f"prediction count {count} out of [1, {n}]")
    return order[:count]


def measure_accuracy(
    predictions: Sequence[Sequence[int | None]], actuals: Sequence[Sequence[Sequence[int]]]
) -> list[float]:
    """Per-layer fraction of tokens whose predicted top-1 is in the selected set.

    ``predictions[layer][token]`` is the predicted top-1 expert, or None where
    the layer was not predictable for that token; those entries are skipped.
    A layer with no predictable tokens scores 0.
    """
    if len(predictions) != len(actuals):
        raise DomainError(f"{len(predictions)} prediction layers vs {len(actuals)} actual layers")
    betas = []
    for li, (pred, act) in enumerate(zip(predictions, actuals)):
        if len(pred) != len(act):
            raise DomainError(f"layer {li}: {len(pred)} predictions vs {len(act)} actuals")
        hits = total = 0
        for p, sel in zip(pred, act):
            if p is None:
                continue
            total += 1
            hits += p in sel
        betas.append(hits / total if total else 0.0)
    return betas


def plan_prefetch(
    cache_view: Container[ExpertRef],
    predictions: Sequence[Sequence[ExpertRef]],
    depth_limit: int = 2,
    source_layer: int = -1,
) -> PrefetchPlan:
    """Prefetch the nearest predicted layer that is not already fully covered.

    ``predictions[0]`` holds the ranked predictions for the next layer,
    ``predictions[1]`` for the one after, and so on.
    """
    if not 1 <= depth_limit <= MAX_LOOKAHEAD:
        raise DomainError(f"depth_limit must be in [1, {MAX_LOOKAHEAD}], got {depth_limit}")
    for depth, refs in enumerate(predictions[:depth_limit], start=1):
        seen = set()
        missing = []
        for r in refs:
            if r not in cache_view and r not in seen:
                seen.add(r)
                missing.append(PlannedFetch(r, source_layer, depth))
        if missing:
            return PrefetchPlan(tuple(missing))
    return PrefetchPlan()


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def kl_loss(pred_logits, true_logits) -> float:
    """KL(softmax(true) || softmax(pred))."""
    pl = np.asarray(pred_logits, dtype=np.float64)
    tl = np.asarray(true_logits, dtype=np.float64)
    if pl.shape != tl.shape:
        raise DomainError(f"logit shapes differ: {pl.shape} vs {tl.shape}")
    log_p = _log_softmax(tl)
    log_q = _log_softmax(pl)
    p = np.exp(log_p)
    return float(max(0.0, np.sum(p * (log_p - log_q))))


def batch_kl_loss(weights: np.ndarray, inputs: np.ndarray, true_logits: np.ndarray) -> float:
    """Mean KL over rows, predicted logits = inputs @ weights."""
    log_p = _log_softmax(true_logits)
    log_q = _log_softmax(inputs @ weights)
    return float(np.mean(np.sum(np.exp(log_p) * (log_p - log_q), axis=-1)))


def batch_kl_grad(weights: np.ndarray, inputs: np.ndarray, true_logits: np.ndarray) -> np.ndarray:
    """Gradient of batch_kl_loss w.r.t. weights: X^T (q - p) / M."""
    p = softmax(true_logits)
    q = softmax(inputs @ weights)
    return inputs.T @ (q - p) / inputs.shape[0]


def first_layer_pairs(traces: Sequence[TokenTrace]) -> tuple[np.ndarray, np.ndarray]:
    """Previous token's last-layer activation paired with this token's first-layer logits.

    Scores are stored post-softmax, so their logs serve as logits (softmax is
    shift invariant).
    """
    if len(traces) < 2:
        raise DomainError("need at least two consecutive tokens to form a training pair")
    inputs = np.array([t.layers[-1].activation for t in traces[:-1]], dtype=np.float64)
    scores = np.array([t.layers[0].gate.scores for t in traces[1:]], dtype=np.float64)
    return inputs, np.log(np.maximum(scores, np.finfo(np.float64).tiny))


def train_predictive_gate(
    inputs: np.ndarray, true_logits: np.ndarray, config: TrainingConfig = TrainingConfig()
) -> PredictiveGate:
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(true_logits, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DomainError("empty training set")
    if y.shape[0] != x.shape[0]:
        raise DomainError(f"{x.shape[0]} inputs vs {y.shape[0]} targets")
    rng = np.random.default_rng(config.seed)
    w = rng.normal(0.0, config.init_scale, size=(x.shape[1], y.shape[1]))
    history = [batch_kl_loss(w, x, y)]
    for _ in range(config.steps):
        w = w - config.learning_rate * batch_kl_grad(w, x, y)
        history.append(batch_kl_loss(w, x, y))
    return PredictiveGate(w, training_config=config, loss_history=tuple(history))


def top1_accuracy(gate: GateMatrix, inputs: np.ndarray, true_logits: np.ndarray) -> float:
    pred = np.argmax(np.asarray(inputs) @ gate.weights, axis=-1)
    return float(np.mean(pred == np.argmax(true_logits, axis=-1)))
