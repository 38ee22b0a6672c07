"""Synthetic MoE routing traces, offline profiling, and artifact file I/O."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .cache_model import CostTable
from .core import (
    Allocation,
    GateRecord,
    LayerProfile,
    LayerRecord,
    ModelSpec,
    TokenTrace,
    trace_arrays,
    top_k,
)
from .gating import decide_all, profile_single_prob
from .prefetch import GateMatrix, PredictiveGate, TrainingConfig, measure_accuracy

FORMAT_VERSION = 1
DEFAULT_PROFILE_TOKENS = 1000


class WorkloadError(Exception):
    """Base class for artifact file problems."""


class ParseError(WorkloadError):
    def __init__(self, path, line: int | None, msg: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {msg}")
        self.line = line


class SchemaError(WorkloadError):
    pass


class VersionError(WorkloadError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    spec: ModelSpec
    tokens: int = DEFAULT_PROFILE_TOKENS
    # lower concentration -> wider logit spread -> more skewed gate scores
    dirichlet_concentration: float = 0.5
    residual_drift: float = 0.3
    gate_seed: int = 0
    token_seed: int = 1
    fisher_base: float = 1.0
    fisher_scale: tuple[float, ...] | None = None
    drift_scale: tuple[float, ...] | None = None
    # how much of the previous token's last activation carries into the next token's first layer
    token_carryover: float = 0.9
    shared_gates: bool = False
    # rescale the residual stream to unit norm after every layer, as a pre-gate norm would
    unit_activations: bool = True

    def __post_init__(self) -> None:
        L = self.spec.num_layers
        if self.tokens < 1:
            raise ValueError("tokens must be >= 1")
        if not self.dirichlet_concentration > 0:
            raise ValueError("dirichlet_concentration must be positive")
        if self.residual_drift < 0:
            raise ValueError("residual_drift must be >= 0")
        if not 0.0 <= self.token_carryover <= 1.0:
            raise ValueError("token_carryover must be in [0, 1]")
        for name in ("fisher_scale", "drift_scale"):
            v = getattr(self, name)
            if v is not None:
                if len(v) != L:
                    raise ValueError(f"{name} needs {L} entries, got {len(v)}")
                if any(x < 0 for x in v):
                    raise ValueError(f"{name} entries must be >= 0")
                object.__setattr__(self, name, tuple(float(x) for x in v))

    def fisher(self) -> list[float]:
        scale = self.fisher_scale or (1.0,) * self.spec.num_layers
        return [self.fisher_base * s for s in scale]

    def drifts(self) -> list[float]:
        scale = self.drift_scale or (1.0,) * self.spec.num_layers
        return [self.residual_drift * s for s in scale]

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "tokens": self.tokens,
            "dirichlet_concentration": self.dirichlet_concentration,
            "residual_drift": self.residual_drift,
            "gate_seed": self.gate_seed,
            "token_seed": self.token_seed,
            "fisher_base": self.fisher_base,
            "fisher_scale": list(self.fisher_scale) if self.fisher_scale else None,
            "drift_scale": list(self.drift_scale) if self.drift_scale else None,
            "token_carryover": self.token_carryover,
            "shared_gates": self.shared_gates,
            "unit_activations": self.unit_activations,
        }


def heterogeneous_scales(num_layers: int, early: float, late: float) -> tuple[float, ...]:
    """Linear ramp from the first to the last layer."""
    if num_layers == 1:
        return (early,)
    return tuple(early + (late - early) * i / (num_layers - 1) for i in range(num_layers))


HETEROGENEOUS_FISHER = (3.0, 1.0)
HETEROGENEOUS_DRIFT = (2.0, 0.5)


def heterogeneous_config(spec: ModelSpec, **kw) -> SynthConfig:
    """Early layers more sensitive and drifting faster than late ones."""
    L = spec.num_layers
    kw.setdefault("fisher_scale", heterogeneous_scales(L, *HETEROGENEOUS_FISHER))
    kw.setdefault("drift_scale", heterogeneous_scales(L, *HETEROGENEOUS_DRIFT))
    return SynthConfig(spec=spec, **kw)


def generate_gates(config: SynthConfig) -> list[GateMatrix]:
    """Router matrices with equal-norm columns.

    Equal column norms keep expert popularity balanced over isotropic inputs,
    the state a load-balancing loss drives real routers towards.
    """
    spec = config.spec
    rng = np.random.default_rng(config.gate_seed)
    sigma = 1.0 / math.sqrt(config.dirichlet_concentration)
    shape = (spec.hidden_dim, spec.experts_per_layer)

    def draw() -> np.ndarray:
        w = rng.normal(0.0, 1.0, size=shape)
        return w / np.linalg.norm(w, axis=0, keepdims=True) * sigma * math.sqrt(spec.hidden_dim)

    if config.shared_gates:
        w = draw()
        return [GateMatrix(w) for _ in range(spec.num_layers)]
    return [GateMatrix(draw()) for _ in range(spec.num_layers)]


def generate_activations(config: SynthConfig) -> np.ndarray:
    """(tokens, layers, d) residual-stream activations."""
    spec = config.spec
    T, L, d = config.tokens, spec.num_layers, spec.hidden_dim
    rng = np.random.default_rng(config.token_seed)
    scale = 1.0 / math.sqrt(d)
    # fixed rotation: the next token depends linearly on the previous one without resembling it
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    rotation = q * np.sign(np.diag(r))
    fresh = rng.normal(0.0, scale, size=(T, d))
    # drawn even when drift is zero so every drift setting shares the same random stream
    deltas = rng.normal(0.0, scale, size=(T, L, d))
    drift = np.asarray(config.drifts())
    rho = config.token_carryover
    unit = config.unit_activations

    def norm(v: np.ndarray) -> np.ndarray:
        n = np.linalg.norm(v)
        return v / n if unit and n > 0 else v

    acts = np.empty((T, L, d))
    prev_last = None
    for j in range(T):
        x = fresh[j]
        if prev_last is not None and rho > 0.0:
            nrm = np.linalg.norm(prev_last)
            if nrm > 0:
                x = rho * (rotation @ prev_last) / nrm + math.sqrt(1.0 - rho * rho) * fresh[j]
        x = norm(x)
        for li in range(L):
            acts[j, li] = x
            x = norm(x + drift[li] * deltas[j, li])
        prev_last = acts[j, L - 1]
    return acts


def generate_trace(config: SynthConfig) -> tuple[list[TokenTrace], list[GateMatrix]]:
    spec = config.spec
    gates = generate_gates(config)
    acts = generate_activations(config)
    logits = np.stack([acts[:, li] @ gates[li].weights for li in range(spec.num_layers)], axis=1)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    scores = e / e.sum(axis=-1, keepdims=True)
    traces = []
    for j in range(config.tokens):
        layers = []
        for li in range(spec.num_layers):
            s = tuple(scores[j, li].tolist())
            layers.append(LayerRecord(tuple(acts[j, li].tolist()), GateRecord(s, top_k(s, spec.top_k))))
        traces.append(TokenTrace(j, tuple(layers)))
    return traces, gates


def adjacent_cosine(traces: Sequence[TokenTrace]) -> np.ndarray:
    """(tokens, layers-1) cosine similarity between consecutive layers' inputs."""
    acts, _ = trace_arrays(traces)
    a, b = acts[:, :-1], acts[:, 1:]
    return np.sum(a * b, axis=-1) / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))


def predicted_top1(
    traces: Sequence[TokenTrace],
    gates: Sequence[GateMatrix],
    predictive_gate: GateMatrix | None = None,
) -> list[list[int | None]]:
    """Predicted top-1 per [layer][token]; None where nothing predicts it."""
    acts, _ = trace_arrays(traces)
    T, L = acts.shape[0], acts.shape[1]
    out: list[list[int | None]] = []
    if predictive_gate is not None and T > 1:
        first = np.argmax(acts[:-1, L - 1] @ predictive_gate.weights, axis=-1).tolist()
        out.append([None] + first)
    else:
        out.append([None] * T)
    for li in range(1, L):
        out.append(np.argmax(acts[:, li - 1] @ gates[li].weights, axis=-1).tolist())
    return out


def generate_profiles(
    traces: Sequence[TokenTrace],
    gates: Sequence[GateMatrix],
    tau: float,
    spec: ModelSpec,
    fisher: Sequence[float],
    predictive_gate: GateMatrix | None = None,
) -> list[LayerProfile]:
    if not traces:
        raise ValueError("cannot profile an empty trace")
    if len(fisher) != spec.num_layers:
        raise ValueError(f"need {spec.num_layers} fisher values, got {len(fisher)}")
    base = [LayerProfile(0.0, 0.0, float(f)) for f in fisher]
    decisions = decide_all(traces, base, tau, spec)
    alphas = profile_single_prob(decisions)
    actual = [[d.selected for d in layer] for layer in decisions]
    betas = measure_accuracy(predicted_top1(traces, gates, predictive_gate), actual)
    return [LayerProfile(a, b, float(f)) for a, b, f in zip(alphas, betas, fisher)]


def mean_reuse_beta(profiles: Sequence[LayerProfile]) -> float:
    """Mean accuracy over the layers predicted by gate reuse (all but the first)."""
    rest = profiles[1:] if len(profiles) > 1 else profiles
    return sum(p.prefetch_accuracy for p in rest) / len(rest)


def tune_drift(
    config: SynthConfig,
    target_beta: float,
    tau: float = 0.0,
    hi: float = 4.0,
    iters: int = 30,
) -> tuple[float, float]:
    """Bisect residual drift until the mean gate-reuse accuracy reaches target_beta.

    Accuracy falls as drift grows. Returns (drift, measured mean beta).
    """
    fisher = config.fisher()

    def beta_at(eps: float) -> float:
        cfg = dataclasses.replace(config, residual_drift=eps)
        traces, gates = generate_trace(cfg)
        return mean_reuse_beta(generate_profiles(traces, gates, tau, cfg.spec, fisher))

    lo, b_lo = 0.0, beta_at(0.0)
    b_hi = beta_at(hi)
    if b_lo < target_beta:
        return lo, b_lo
    if b_hi > target_beta:
        return hi, b_hi
    best = (lo, b_lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        b = beta_at(mid)
        if abs(b - target_beta) < abs(best[1] - target_beta):
            best = (mid, b)
        if b >= target_beta:
            lo = mid
        else:
            hi = mid
    return best


# --------------------------------------------------------------------------- I/O


def _dump(path, payload: dict) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def _check_header(path, obj: Any, kind: str, line: int | None = None) -> dict:
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}: expected a JSON object")
    if "format_version" not in obj:
        raise SchemaError(f"{path}: missing format_version")
    if obj["format_version"] != FORMAT_VERSION:
        raise VersionError(
            f"{path}: unsupported format_version {obj['format_version']!r} (expected {FORMAT_VERSION})"
        )
    if obj.get("kind") != kind:
        raise SchemaError(f"{path}: expected kind {kind!r}, got {obj.get('kind')!r}")
    return obj


def _load(path, kind: str) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.msg) from None
    return _check_header(path, obj, kind)


def _field(path, obj: dict, key: str):
    try:
        return obj[key]
    except (KeyError, TypeError):
        raise SchemaError(f"{path}: missing field {key!r}") from None


def save_trace(path, traces: Sequence[TokenTrace], spec: ModelSpec) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format_version": FORMAT_VERSION, "kind": "trace", "spec": spec.to_dict()}) + "\n")
        for tok in traces:
            row = {
                "token": tok.token_index,
                "layers": [
                    {
                        "activation": list(rec.activation),
                        "scores": list(rec.gate.scores),
                        "selected": list(rec.gate.selected),
                    }
                    for rec in tok.layers
                ],
            }
            fh.write(json.dumps(row) + "\n")


def load_trace(path) -> tuple[ModelSpec, list[TokenTrace]]:
    traces = []
    spec = None
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if spec is None:
                _check_header(path, obj, "trace", lineno)
                try:
                    spec = ModelSpec.from_dict(obj["spec"])
                except (KeyError, TypeError, ValueError) as exc:
                    raise SchemaError(f"{path}:{lineno}: bad spec header ({exc})") from None
                continue
            try:
                layers = tuple(
                    LayerRecord(
                        tuple(float(x) for x in rec["activation"]),
                        GateRecord(
                            tuple(float(x) for x in rec["scores"]),
                            tuple(int(x) for x in rec["selected"]),
                        ),
                    )
                    for rec in obj["layers"]
                )
                traces.append(TokenTrace(int(obj["token"]), layers))
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{lineno}: malformed token record ({exc})") from None
    if spec is None:
        raise ParseError(path, None, "empty trace file")
    return spec, traces


def save_gates(path, gates: Sequence[GateMatrix], spec: ModelSpec) -> None:
    _dump(
        path,
        {
            "format_version": FORMAT_VERSION,
            "kind": "gates",
            "spec": spec.to_dict(),
            "layers": [g.weights.tolist() for g in gates],
        },
    )


def load_gates(path) -> tuple[ModelSpec, list[GateMatrix]]:
    obj = _load(path, "gates")
    try:
        spec = ModelSpec.from_dict(_field(path, obj, "spec"))
        gates = [GateMatrix(np.array(w, dtype=np.float64)) for w in _field(path, obj, "layers")]
        for g in gates:
            g.check(spec)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed gates ({exc})") from None
    if len(gates) != spec.num_layers:
        raise SchemaError(f"{path}: {len(gates)} gate matrices for {spec.num_layers} layers")
    return spec, gates


def _profiles_payload(profiles: Sequence[LayerProfile]) -> list[dict]:
    return [
        {
            "single_expert_prob": p.single_expert_prob,
            "prefetch_accuracy": p.prefetch_accuracy,
            "fisher_diag_sum": p.fisher_diag_sum,
        }
        for p in profiles
    ]


def profile_hash(profiles: Sequence[LayerProfile]) -> str:
    blob = json.dumps(_profiles_payload(profiles), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ProfileBundle:
    spec: ModelSpec
    profiles: list[LayerProfile]
    tau: float | None = None
    predictive_gate: PredictiveGate | None = None
    extra: dict = field(default_factory=dict)


def save_profiles(path, bundle: ProfileBundle) -> None:
    pg = None
    if bundle.predictive_gate is not None:
        pg = {
            "weights": bundle.predictive_gate.weights.tolist(),
            "training_config": bundle.predictive_gate.training_config.to_dict(),
        }
    _dump(
        path,
        {
            "format_version": FORMAT_VERSION,
            "kind": "profiles",
            "spec": bundle.spec.to_dict(),
            "tau": bundle.tau,
            "layers": _profiles_payload(bundle.profiles),
            "predictive_gate": pg,
            "extra": bundle.extra,
        },
    )


def load_profiles(path) -> ProfileBundle:
    obj = _load(path, "profiles")
    try:
        spec = ModelSpec.from_dict(_field(path, obj, "spec"))
        profiles = [
            LayerProfile(
                float(r["single_expert_prob"]), float(r["prefetch_accuracy"]), float(r["fisher_diag_sum"])
            )
            for r in _field(path, obj, "layers")
        ]
        pg = None
        raw = obj.get("predictive_gate")
        if raw is not None:
            pg = PredictiveGate(
                np.array(raw["weights"], dtype=np.float64),
                training_config=TrainingConfig(**raw["training_config"]),
            )
            pg.check(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed profiles ({exc})") from None
    if len(profiles) != spec.num_layers:
        raise SchemaError(f"{path}: {len(profiles)} layer profiles for {spec.num_layers} layers")
    tau = obj.get("tau")
    return ProfileBundle(spec, profiles, None if tau is None else float(tau), pg, obj.get("extra") or {})


def save_allocation(path, allocation: Allocation, total_cost: float, profiles_digest: str | None) -> None:
    _dump(
        path,
        {
            "format_version": FORMAT_VERSION,
            "kind": "allocation",
            "budget": allocation.budget,
            "capacities": list(allocation.capacities),
            "total_cost": total_cost,
            "profile_hash": profiles_digest,
        },
    )


def load_allocation(path) -> tuple[Allocation, float, str | None]:
    obj = _load(path, "allocation")
    try:
        alloc = Allocation(tuple(int(x) for x in _field(path, obj, "capacities")), int(_field(path, obj, "budget")))
        total = float(_field(path, obj, "total_cost"))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed allocation ({exc})") from None
    return alloc, total, obj.get("profile_hash")


def save_cost_table(path, table: CostTable) -> None:
    _dump(path, {"format_version": FORMAT_VERSION, "kind": "cost_table", "f": table.f.tolist()})


def load_cost_table(path) -> CostTable:
    obj = _load(path, "cost_table")
    try:
        return CostTable(np.array(_field(path, obj, "f"), dtype=np.float64))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed cost table ({exc})") from None


def save_threshold(path, tau: float, **info) -> None:
    _dump(path, {"format_version": FORMAT_VERSION, "kind": "threshold", "tau": tau, **info})


def load_threshold(path) -> float:
    obj = _load(path, "threshold")
    try:
        tau = float(_field(path, obj, "tau"))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed threshold ({exc})") from None
    if tau < 0:
        raise SchemaError(f"{path}: negative tau")
    return tau
