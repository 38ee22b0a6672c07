"""Discrete-event simulation of offloaded MoE decoding on two streams.

One compute stream runs attention, gate evaluation and expert computation
strictly in program order. One comm stream moves expert tiles from host to
device, one tile at a time. On-demand tiles always go before queued prefetch
tiles; a tile already on the wire is never interrupted. Time is integer ticks.

The comm stream is advanced lazily: before the compute stream touches the
caches or enqueues transfers at time ``t`` every tile that starts before ``t``
is scheduled. Tiles are only ever scheduled at or before the current compute
time, so later enqueues can never invalidate a scheduling decision.
"""

from __future__ import annotations

import heapq
import json
from collections import OrderedDict, deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .allocator import dp_allocate
from .cache_model import build_cost_table
from .core import (
    Allocation,
    DomainError,
    ExpertRef,
    LayerProfile,
    ModelSpec,
    SeededRng,
    TokenTrace,
    trace_arrays,
    uniform_allocation,
)
from .gating import perturbation_matrix
from .prefetch import MAX_LOOKAHEAD, GateMatrix, plan_prefetch


@dataclass(frozen=True)
class SimConfig:
    tile_count_per_expert: int = 4
    tile_transfer_time: int = 3
    tile_compute_time: int = 1
    attention_compute_time: int = 6
    gate_compute_time: int = 1
    lookahead_depth: int = 2
    adaptive_gating: bool = True
    prefetch: bool = True
    adaptive_cache: bool = True

    def __post_init__(self) -> None:
        for name in ("tile_transfer_time", "tile_compute_time", "attention_compute_time", "gate_compute_time"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise DomainError(f"{name} must be a nonnegative integer, got {v!r}")
        if not isinstance(self.tile_count_per_expert, (int, np.integer)) or self.tile_count_per_expert < 1:
            raise DomainError(f"tile_count_per_expert must be >= 1, got {self.tile_count_per_expert!r}")
        if not 0 <= self.lookahead_depth <= MAX_LOOKAHEAD:
            raise DomainError(f"lookahead_depth must be in [0, {MAX_LOOKAHEAD}]")

    @property
    def expert_compute_time(self) -> int:
        return self.tile_count_per_expert * self.tile_compute_time

    def with_policy(self, adaptive_gating: bool, prefetch: bool, adaptive_cache: bool) -> "SimConfig":
        d = asdict(self)
        d.update(adaptive_gating=adaptive_gating, prefetch=prefetch, adaptive_cache=adaptive_cache)
        return SimConfig(**d)


def tile_pipeline_latency(n: int, transfer: int, compute: int) -> int:
    """Transfer start to compute finish for one streamed expert of n tiles."""
    if n < 1 or transfer < 0 or compute < 0:
        raise DomainError("need n >= 1 and nonnegative durations")
    if transfer >= compute:
        return n * transfer + compute
    return transfer + n * compute


# ----------------------------------------------------------------------------- cache


class LayerLRU:
    """LRU set of resident experts for one layer."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise DomainError("capacity must be >= 0")
        self.capacity = capacity
        self._order: OrderedDict[int, None] = OrderedDict()

    def __contains__(self, expert: int) -> bool:
        return expert in self._order

    def __len__(self) -> int:
        return len(self._order)

    def recency(self) -> list[int]:
        """Residents from least to most recently used."""
        return list(self._order)

    def touch(self, expert: int) -> bool:
        if expert in self._order:
            self._order.move_to_end(expert)
            return True
        return False

    def insert(self, expert: int) -> int | None:
        """Make ``expert`` most recent; return whatever had to leave, if anything."""
        if self.capacity == 0:
            return expert
        if expert in self._order:
            self._order.move_to_end(expert)
            return None
        evicted = None
        if len(self._order) >= self.capacity:
            evicted, _ = self._order.popitem(last=False)
        self._order[expert] = None
        return evicted


class CacheState:
    def __init__(self, allocation: Allocation):
        self.layers = [LayerLRU(t) for t in allocation.capacities]

    def __contains__(self, ref: ExpertRef) -> bool:
        return ref.expert in self.layers[ref.layer]


def lru_touch(cache: CacheState, ref: ExpertRef) -> bool:
    return cache.layers[ref.layer].touch(ref.expert)


def lru_insert(cache: CacheState, ref: ExpertRef) -> ExpertRef | None:
    ev = cache.layers[ref.layer].insert(ref.expert)
    return None if ev is None else ExpertRef(ref.layer, ev)


# ----------------------------------------------------------------------------- results


class Event(NamedTuple):
    stream: str  # "compute" | "comm"
    kind: str  # attention | gate | expert | tile | transfer | prefetch
    start: int
    end: int
    layer: int
    expert: int | None
    token: int
    tile: int | None = None
    job: int | None = None

    def export(self) -> dict:
        return {
            "stream": self.stream,
            "kind": self.kind,
            "start": self.start,
            "end": self.end,
            "expert": self.expert,
            "token": self.token,
            "layer": self.layer,
        }


@dataclass(frozen=True)
class SimMetrics:
    per_token_latency: tuple[int, ...]
    on_demand_loads: int
    stall_time: int
    cache_hits: int
    prefetch_hits: int
    single_expert_decisions: int
    experts_activated_total: int
    per_layer_loads: tuple[int, ...] = ()
    prefetch_issued: int = 0
    # on-demand loads whose expert was already being prefetched but arrived too late
    late_prefetches: int = 0
    per_layer_late: tuple[int, ...] = ()

    @property
    def total_latency(self) -> int:
        return sum(self.per_token_latency)

    @property
    def mean_latency(self) -> float:
        return self.total_latency / len(self.per_token_latency) if self.per_token_latency else 0.0

    def summary(self) -> dict:
        return {
            "tokens": len(self.per_token_latency),
            "total_latency": self.total_latency,
            "mean_latency": self.mean_latency,
            "on_demand_loads": self.on_demand_loads,
            "stall_time": self.stall_time,
            "cache_hits": self.cache_hits,
            "prefetch_hits": self.prefetch_hits,
            "prefetch_issued": self.prefetch_issued,
            "late_prefetches": self.late_prefetches,
            "single_expert_decisions": self.single_expert_decisions,
            "experts_activated_total": self.experts_activated_total,
        }

    def to_dict(self) -> dict:
        d = self.summary()
        d["per_token_latency"] = list(self.per_token_latency)
        d["per_layer_loads"] = list(self.per_layer_loads)
        d["per_layer_late"] = list(self.per_layer_late)
        return d


@dataclass
class SimResult:
    metrics: SimMetrics
    timeline: list[Event] = field(default_factory=list)
    selected: list[list[tuple[int, ...]]] = field(default_factory=list)  # [token][layer]

    def write_timeline(self, path) -> None:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        with p.open("w", encoding="utf-8") as fh:
            for ev in self.timeline:
                fh.write(json.dumps(ev.export()) + "\n")


# ----------------------------------------------------------------------------- planning


def _select_experts(scores: np.ndarray, fisher: Sequence[float], tau: float, k: int, adaptive: bool):
    """Per (token, layer) selected experts under the gating policy."""
    order = np.argsort(-scores, axis=-1, kind="stable")
    if adaptive:
        single = perturbation_matrix(scores, fisher) <= tau
    else:
        single = np.zeros(scores.shape[:2], dtype=bool)
    if k == 1:
        single[:] = True
    T, L = scores.shape[:2]
    top = order[..., :k].tolist()
    single_l = single.tolist()
    return [[tuple(top[j][l][:1]) if single_l[j][l] else tuple(top[j][l]) for l in range(L)] for j in range(T)]


def _reuse_predictions(
    acts: np.ndarray,
    gates: Sequence[GateMatrix],
    predictive_gate: GateMatrix | None,
    fisher: Sequence[float],
    tau: float,
    spec: ModelSpec,
    caps: Sequence[int],
    depth: int,
    adaptive: bool,
):
    """pred[j][l] -> list over lookahead depth of expert lists for the targeted layer."""
    T, L = acts.shape[:2]
    K = spec.top_k
    pred = [[[] for _ in range(L)] for _ in range(T)]

    def ranked(logits: np.ndarray, target: int) -> list[list[int]]:
        order = np.argsort(-logits, axis=-1, kind="stable")
        count = np.full(logits.shape[0], K)
        if adaptive and K > 1:
            z = logits - logits.max(axis=-1, keepdims=True)
            e = np.exp(z)
            s = e / e.sum(axis=-1, keepdims=True)
            single = perturbation_matrix(s[:, None, :], [fisher[target]])[:, 0] <= tau
            count[single] = 1
        count = np.minimum(count, caps[target])
        rows = order.tolist()
        return [r[:c] for r, c in zip(rows, count.tolist())]

    for l in range(L):
        for d in range(1, depth + 1):
            target = l + d
            if target < L:
                lists = ranked(acts[:, l] @ gates[target].weights, target)
                for j in range(T):
                    pred[j][l].append(lists[j])
            elif target == L and predictive_gate is not None:
                lists = ranked(acts[:, L - 1] @ predictive_gate.weights, 0)
                for j in range(T):
                    pred[j][l].append(lists[j])
                break
            else:
                break
    return pred


def _sampled_predictions(
    selected: list[list[tuple[int, ...]]],
    profiles: Sequence[LayerProfile],
    spec: ModelSpec,
    caps: Sequence[int],
    depth: int,
    rng: np.random.Generator,
):
    """Predictions drawn to hit each layer's profiled accuracy, for runs without gate matrices."""
    T, L, N = len(selected), spec.num_layers, spec.experts_per_layer
    by_target: dict[tuple[int, int], list[int]] = {}
    for j in range(T):
        for l in range(L):
            if j == 0 and l == 0:
                continue
            sel = selected[j][l]
            n = min(len(sel), caps[l])
            if n == 0:
                by_target[(j, l)] = []
                continue
            if rng.random() < profiles[l].prefetch_accuracy:
                rest = [e for e in range(N) if e != sel[0]]
                picks = [sel[0]] + [rest[i] for i in rng.permutation(len(rest))[: n - 1]]
            else:
                pool = [e for e in range(N) if e not in sel]
                picks = [pool[i] for i in rng.permutation(len(pool))[:n]]
            by_target[(j, l)] = picks
    pred = [[[] for _ in range(L)] for _ in range(T)]
    for j in range(T):
        for l in range(L):
            for d in range(1, depth + 1):
                target = l + d
                if target < L:
                    pred[j][l].append(by_target[(j, target)])
                elif target == L and j + 1 < T:
                    pred[j][l].append(by_target[(j + 1, 0)])
                    break
                else:
                    break
    return pred


# ----------------------------------------------------------------------------- engine


class _Job:
    __slots__ = ("id", "layer", "expert", "token", "prefetch", "promoted", "enqueued", "tile_ends")

    def __init__(self, jid: int, layer: int, expert: int, token: int, prefetch: bool, enqueued: int):
        self.id = jid
        self.layer = layer
        self.expert = expert
        self.token = token
        self.prefetch = prefetch
        self.promoted = False
        self.enqueued = enqueued
        self.tile_ends: list[int] = []


class _Engine:
    def __init__(self, spec: ModelSpec, cfg: SimConfig, allocation: Allocation, record: bool):
        self.spec = spec
        self.cfg = cfg
        self.n_tiles = cfg.tile_count_per_expert
        self.cache = CacheState(allocation)
        self.record = record
        self.events: list[Event] = []
        self.now = 0
        self.comm_time = 0
        self.ondemand: deque[_Job] = deque()
        self.prefetchq: deque[_Job] = deque()
        self.inflight: dict[tuple[int, int], _Job] = {}
        self.arrivals: list[tuple[int, int, _Job]] = []
        self.prefetched_unused: set[tuple[int, int]] = set()
        self.next_job = 0

    # -- comm stream

    def _step_comm(self, limit: int | None) -> bool:
        """Schedule one tile; False if nothing starts before ``limit``."""
        od, pf = self.ondemand, self.prefetchq
        if not od and not pf:
            return False
        earliest = min(q[0].enqueued for q in (od, pf) if q)
        start = max(self.comm_time, earliest)
        if limit is not None and start >= limit:
            return False
        if od and od[0].enqueued <= start:
            job, queue = od[0], od
        else:
            job, queue = pf[0], pf
        k = len(job.tile_ends)
        end = start + self.cfg.tile_transfer_time
        job.tile_ends.append(end)
        self.comm_time = end
        if self.record:
            kind = "prefetch" if job.prefetch and not job.promoted else "transfer"
            self.events.append(Event("comm", kind, start, end, job.layer, job.expert, job.token, k, job.id))
        if len(job.tile_ends) == self.n_tiles:
            queue.popleft()
            heapq.heappush(self.arrivals, (end, job.id, job))
        return True

    def sync(self, t: int) -> None:
        while self._step_comm(t):
            pass
        arrivals = self.arrivals
        while arrivals and arrivals[0][0] <= t:
            _, _, job = heapq.heappop(arrivals)
            if job.promoted or not job.prefetch:
                continue
            key = (job.layer, job.expert)
            del self.inflight[key]
            evicted = self.cache.layers[job.layer].insert(job.expert)
            if evicted != job.expert:
                self.prefetched_unused.add(key)
            if evicted is not None:
                self.prefetched_unused.discard((job.layer, evicted))

    def wait_tile(self, job: _Job, k: int) -> int:
        while len(job.tile_ends) <= k:
            if not self._step_comm(None):
                raise RuntimeError("transfer queue drained while a tile was still awaited")
        return job.tile_ends[k]

    def enqueue(self, layer: int, expert: int, token: int, prefetch: bool) -> _Job:
        job = _Job(self.next_job, layer, expert, token, prefetch, self.now)
        self.next_job += 1
        self.inflight[(layer, expert)] = job
        (self.prefetchq if prefetch else self.ondemand).append(job)
        return job

    def promote(self, job: _Job) -> None:
        if job.prefetch and not job.promoted:
            job.promoted = True
            if job in self.prefetchq:
                self.prefetchq.remove(job)
                self.ondemand.append(job)

    # -- compute stream

    def compute(self, kind: str, duration: int, token: int, layer: int, expert: int | None = None) -> None:
        if self.record:
            self.events.append(Event("compute", kind, self.now, self.now + duration, layer, expert, token))
        self.now += duration


def _validate_inputs(traces, spec, profiles, allocation):
    if not traces:
        raise DomainError("empty trace")
    if len(profiles) != spec.num_layers:
        raise DomainError(f"{len(profiles)} profiles for {spec.num_layers} layers")
    allocation.check(spec)
    for tok in traces:
        if len(tok.layers) != spec.num_layers:
            raise DomainError(f"token {tok.token_index} has {len(tok.layers)} layers, expected {spec.num_layers}")


def simulate_trace(
    traces: Sequence[TokenTrace],
    spec: ModelSpec,
    profiles: Sequence[LayerProfile],
    allocation: Allocation,
    tau: float,
    sim_config: SimConfig,
    seed: int = 0,
    *,
    gates: Sequence[GateMatrix] | None = None,
    predictive_gate: GateMatrix | None = None,
    record_timeline: bool = True,
) -> SimResult:
    """Replay a routing trace token by token and time it.

    With ``gates`` the prefetcher predicts by gate reuse on the traced
    activations (and ``predictive_gate`` for the next token's first layer).
    Without them, predictions are drawn at random so that each layer hits its
    profiled prefetch accuracy; ``seed`` drives that draw. ``allocation``
    fixes every layer's cache capacity; the policy flag ``adaptive_cache``
    only matters to callers that choose the allocation (see compare_policies).
    """
    _validate_inputs(traces, spec, profiles, allocation)
    cfg = sim_config
    L = spec.num_layers
    acts, scores = trace_arrays(traces)
    if acts.shape[2] != spec.hidden_dim or scores.shape[2] != spec.experts_per_layer:
        raise DomainError("trace dimensions do not match the model spec")
    fisher = [p.fisher_diag_sum for p in profiles]
    selected = _select_experts(scores, fisher, tau, spec.top_k, cfg.adaptive_gating)
    caps = allocation.capacities

    depth = cfg.lookahead_depth if cfg.prefetch else 0
    pred = None
    if depth > 0:
        if gates is not None:
            if len(gates) != L:
                raise DomainError(f"{len(gates)} gate matrices for {L} layers")
            pred = _reuse_predictions(
                acts, gates, predictive_gate, fisher, tau, spec, caps, depth, cfg.adaptive_gating
            )
        else:
            pred = _sampled_predictions(selected, profiles, spec, caps, depth, SeededRng(seed).generator())

    eng = _Engine(spec, cfg, allocation, record_timeline)
    layers = eng.cache.layers
    n_tiles, c_tile = cfg.tile_count_per_expert, cfg.tile_compute_time
    expert_time = cfg.expert_compute_time
    latencies = []
    loads = [0] * L
    late = [0] * L
    stall = hits = pf_hits = singles = activated = issued = 0

    for j in range(len(traces)):
        token_start = eng.now
        for l in range(L):
            eng.compute("attention", cfg.attention_compute_time, j, l)
            eng.compute("gate", cfg.gate_compute_time, j, l)
            sel = selected[j][l]
            activated += len(sel)
            singles += len(sel) == 1
            eng.sync(eng.now)

            resident, streamed = [], []
            lru = layers[l]
            for e in sel:
                key = (l, e)
                if e in lru:
                    lru.touch(e)
                    if key in eng.prefetched_unused:
                        eng.prefetched_unused.discard(key)
                        pf_hits += 1
                    else:
                        hits += 1
                    resident.append(e)
                else:
                    loads[l] += 1
                    job = eng.inflight.get(key)
                    if job is None:
                        job = eng.enqueue(l, e, j, prefetch=False)
                    else:
                        late[l] += job.prefetch and not job.promoted
                        eng.promote(job)
                    streamed.append(job)

            if pred is not None and pred[j][l]:
                targets = []
                for d, experts in enumerate(pred[j][l], start=1):
                    tl = l + d
                    if tl >= L:
                        targets.append([ExpertRef(0, e) for e in experts])
                    else:
                        targets.append([ExpertRef(tl, e) for e in experts])
                view = _CacheView(layers, eng.inflight)
                plan = plan_prefetch(view, targets, len(targets), source_layer=l)
                for item in plan.items:
                    target_token = j + 1 if l + item.depth >= L else j
                    eng.enqueue(item.ref.layer, item.ref.expert, target_token, prefetch=True)
                    issued += 1

            for e in resident:
                eng.compute("expert", expert_time, j, l, e)
            for job in streamed:
                for k in range(n_tiles):
                    ready = eng.wait_tile(job, k)
                    if ready > eng.now:
                        stall += ready - eng.now
                        eng.now = ready
                    if eng.record:
                        eng.events.append(
                            Event("compute", "tile", eng.now, eng.now + c_tile, l, job.expert, j, k, job.id)
                        )
                    eng.now += c_tile
                eng.sync(eng.now)
                del eng.inflight[(l, job.expert)]
                evicted = lru.insert(job.expert)
                if evicted is not None:
                    eng.prefetched_unused.discard((l, evicted))
        latencies.append(eng.now - token_start)

    metrics = SimMetrics(
        per_token_latency=tuple(latencies),
        on_demand_loads=sum(loads),
        stall_time=stall,
        cache_hits=hits,
        prefetch_hits=pf_hits,
        single_expert_decisions=singles,
        experts_activated_total=activated,
        per_layer_loads=tuple(loads),
        prefetch_issued=issued,
        late_prefetches=sum(late),
        per_layer_late=tuple(late),
    )
    return SimResult(metrics, eng.events, selected)


class _CacheView:
    """Resident or already on its way: either way there is nothing left to prefetch."""

    __slots__ = ("layers", "inflight")

    def __init__(self, layers, inflight):
        self.layers = layers
        self.inflight = inflight

    def __contains__(self, ref: ExpertRef) -> bool:
        return ref.expert in self.layers[ref.layer] or (ref.layer, ref.expert) in self.inflight


# ----------------------------------------------------------------------------- invariants


def check_timeline(result: SimResult) -> list[str]:
    """Causality, stream exclusivity and conservation violations in a recorded run."""
    problems = []
    m = result.metrics
    by_stream: dict[str, list[Event]] = {"compute": [], "comm": []}
    transfer_end: dict[tuple[int, int], int] = {}
    for ev in result.timeline:
        if ev.end < ev.start:
            problems.append(f"negative duration: {ev}")
        by_stream[ev.stream].append(ev)
        if ev.stream == "comm":
            transfer_end[(ev.job, ev.tile)] = ev.end
    for stream, events in by_stream.items():
        events = sorted(events, key=lambda e: (e.start, e.end))
        for a, b in zip(events, events[1:]):
            if b.start < a.end:
                problems.append(f"{stream} overlap: {a} / {b}")

    streamed = set()
    resident_computes = 0
    for ev in by_stream["compute"]:
        if ev.kind == "tile":
            done = transfer_end.get((ev.job, ev.tile))
            if done is None:
                problems.append(f"tile computed without a transfer: {ev}")
            elif ev.start < done:
                problems.append(f"tile computed at {ev.start} before its transfer ended at {done}: {ev}")
            streamed.add((ev.token, ev.layer, ev.expert))
        elif ev.kind == "expert":
            resident_computes += 1

    expected_activated = sum(len(s) for tok in result.selected for s in tok)
    if m.experts_activated_total != expected_activated:
        problems.append(f"activated {m.experts_activated_total} != sum of selections {expected_activated}")
    if resident_computes + len(streamed) != m.experts_activated_total:
        problems.append(
            f"computed experts {resident_computes + len(streamed)} != activated {m.experts_activated_total}"
        )
    if m.on_demand_loads != len(streamed):
        problems.append(f"on_demand_loads {m.on_demand_loads} != streamed experts {len(streamed)}")
    if m.cache_hits + m.prefetch_hits != resident_computes:
        problems.append(f"hits {m.cache_hits + m.prefetch_hits} != resident computes {resident_computes}")
    if m.stall_time > m.total_latency:
        problems.append("stall time exceeds latency")
    return problems


# ----------------------------------------------------------------------------- policy comparison

ABLATION_GRID: tuple[tuple[str, bool, bool, bool], ...] = (
    ("baseline", False, False, False),
    ("+gating", True, False, False),
    ("+prefetch", False, True, False),
    ("+gating+cache", True, False, True),
    ("+prefetch+cache", False, True, True),
    ("+gating+prefetch", True, True, False),
    ("all", True, True, True),
)


@dataclass(frozen=True)
class PolicyRow:
    name: str
    adaptive_gating: bool
    prefetch: bool
    adaptive_cache: bool
    capacities: tuple[int, ...]
    metrics: SimMetrics
    speedup: float

    def to_dict(self) -> dict:
        return {
            "technique": self.name,
            "adaptive_gating": self.adaptive_gating,
            "prefetch": self.prefetch,
            "adaptive_cache": self.adaptive_cache,
            "capacities": list(self.capacities),
            **self.metrics.summary(),
            "speedup": self.speedup,
        }


def policy_allocation(
    spec: ModelSpec,
    profiles: Sequence[LayerProfile],
    budget: int,
    adaptive_gating: bool,
    prefetch: bool,
    adaptive_cache: bool,
) -> Allocation:
    """DP allocation on the profile as seen by the enabled techniques, else uniform."""
    if not adaptive_cache:
        return uniform_allocation(spec, budget)
    effective = [
        LayerProfile(
            p.single_expert_prob if adaptive_gating else 0.0,
            p.prefetch_accuracy if prefetch else 0.0,
            p.fisher_diag_sum,
        )
        for p in profiles
    ]
    alloc, _ = dp_allocate(build_cost_table(effective, spec), min(budget, spec.num_layers * spec.experts_per_layer), spec)
    return Allocation(alloc.capacities, budget)


def compare_policies(
    traces: Sequence[TokenTrace],
    spec: ModelSpec,
    profiles: Sequence[LayerProfile],
    budget: int,
    tau: float,
    sim_config: SimConfig,
    seed: int = 0,
    *,
    grid: Sequence[tuple[str, bool, bool, bool]] = ABLATION_GRID,
    gates: Sequence[GateMatrix] | None = None,
    predictive_gate: GateMatrix | None = None,
) -> list[PolicyRow]:
    """Run every grid row on the same workload and seed; speedups are against the first row."""
    rows = []
    base_latency = None
    for name, gating, pf, cache in grid:
        cfg = sim_config.with_policy(gating, pf, cache)
        alloc = policy_allocation(spec, profiles, budget, gating, pf, cache)
        res = simulate_trace(
            traces, spec, profiles, alloc, tau, cfg, seed,
            gates=gates, predictive_gate=predictive_gate, record_timeline=False,
        )
        lat = res.metrics.mean_latency
        if base_latency is None:
            base_latency = lat
        speedup = base_latency / lat if lat > 0 else float("inf")
        rows.append(PolicyRow(name, gating, pf, cache, alloc.capacities, res.metrics, speedup))
    return rows
