"""Adaptive expert gating: sensitivity rule, score-only baseline, threshold calibration."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DomainError, LayerProfile, ModelSpec, TokenTrace, ranked_experts


@dataclass(frozen=True)
class GatingThreshold:
    tau: float

    def __post_init__(self) -> None:
        if not self.tau >= 0.0:
            raise DomainError(f"tau must be >= 0, got {self.tau}")


@dataclass(frozen=True)
class GatingDecision:
    selected: tuple[int, ...]
    perturbation: float
    single: bool


def normalized_top1_share(scores: Sequence[float]) -> float:
    if len(scores) < 2:
        raise DomainError("need at least two experts for a top-2 share")
    order = ranked_experts(scores)
    s1, s2 = scores[order[0]], scores[order[1]]
    if s1 + s2 <= 0.0:
        # all-zero top scores: treat as a perfect tie
        return 0.5
    return s1 / (s1 + s2)


def sensitivity_perturbation(alpha: float, fisher_diag_sum: float) -> float:
    gap = 1.0 - alpha
    return gap * gap * fisher_diag_sum


def _decision(scores: Sequence[float], single: bool, perturbation: float, k: int) -> GatingDecision:
    order = ranked_experts(scores)
    n = 1 if single else k
    return GatingDecision(tuple(order[:n]), perturbation, n == 1)


def gate_decide_sensitivity(
    scores: Sequence[float], profile: LayerProfile, tau: GatingThreshold | float, spec: ModelSpec
) -> GatingDecision:
    t = tau.tau if isinstance(tau, GatingThreshold) else float(tau)
    p = sensitivity_perturbation(normalized_top1_share(scores), profile.fisher_diag_sum)
    return _decision(scores, p <= t, p, spec.top_k)


def gate_decide_score_baseline(
    scores: Sequence[float], score_threshold: float, spec: ModelSpec
) -> GatingDecision:
    if not 0.5 <= score_threshold <= 1.0:
        raise DomainError(f"score threshold must lie in [0.5, 1], got {score_threshold}")
    alpha = normalized_top1_share(scores)
    return _decision(scores, alpha >= score_threshold, (1.0 - alpha) ** 2, spec.top_k)


def fixed_top_k(scores: Sequence[float], spec: ModelSpec) -> GatingDecision:
    return _decision(scores, spec.top_k == 1, float("nan"), spec.top_k)


def perturbation_matrix(score_array: np.ndarray, fisher: Sequence[float]) -> np.ndarray:
    """Vectorised perturbations for a (tokens, layers, N) score array."""
    s = np.sort(score_array, axis=-1)
    s1, s2 = s[..., -1], s[..., -2]
    denom = s1 + s2
    alpha = np.divide(s1, denom, out=np.full_like(s1, 0.5), where=denom > 0)
    gap = 1.0 - alpha
    return gap * gap * np.asarray(fisher, dtype=np.float64)


def _collect_perturbations(traces: Sequence[TokenTrace], profiles: Sequence[LayerProfile]) -> list[float]:
    out = []
    for tok in traces:
        for rec, prof in zip(tok.layers, profiles):
            a = normalized_top1_share(rec.gate.scores)
            out.append(sensitivity_perturbation(a, prof.fisher_diag_sum))
    return out


def single_ratio(traces: Sequence[TokenTrace], profiles: Sequence[LayerProfile], tau: float) -> float:
    p = _collect_perturbations(traces, profiles)
    if not p:
        raise DomainError("empty trace")
    return sum(1 for x in p if x <= tau) / len(p)


def calibrate_threshold(
    traces: Sequence[TokenTrace], profiles: Sequence[LayerProfile], target_single_ratio: float
) -> GatingThreshold:
    """Smallest tau whose realised single-expert ratio reaches the target.

    The ratio only changes at observed perturbation values, so the search
    bisects over the sorted distinct values rather than a continuous range.
    """
    if not 0.0 <= target_single_ratio <= 1.0:
        raise DomainError(f"target ratio out of [0,1]: {target_single_ratio}")
    p = sorted(_collect_perturbations(traces, profiles))
    if not p:
        raise DomainError("cannot calibrate on an empty trace")
    if target_single_ratio == 0.0:
        return GatingThreshold(0.0)
    m = len(p)
    candidates = sorted(set(p))
    lo, hi = 0, len(candidates) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if bisect.bisect_right(p, candidates[mid]) / m >= target_single_ratio:
            hi = mid
        else:
            lo = mid + 1
    return GatingThreshold(max(0.0, candidates[lo]))


def profile_single_prob(decisions_per_layer: Sequence[Sequence[GatingDecision]]) -> list[float]:
    out = []
    for i, decisions in enumerate(decisions_per_layer):
        if not decisions:
            raise DomainError(f"layer {i} has no gating decisions")
        out.append(sum(1 for d in decisions if d.single) / len(decisions))
    return out


def decide_all(
    traces: Sequence[TokenTrace],
    profiles: Sequence[LayerProfile],
    tau: float,
    spec: ModelSpec,
    adaptive: bool = True,
) -> list[list[GatingDecision]]:
    """Gating decisions indexed [layer][token]."""
    per_layer: list[list[GatingDecision]] = [[] for _ in range(spec.num_layers)]
    for tok in traces:
        for li, rec in enumerate(tok.layers):
            if adaptive:
                d = gate_decide_sensitivity(rec.gate.scores, profiles[li], tau, spec)
            else:
                d = fixed_top_k(rec.gate.scores, spec)
            per_layer[li].append(d)
    return per_layer
