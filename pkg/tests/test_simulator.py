import json

import numpy as np
import pytest

from moe_offload.core import Allocation, DomainError, ExpertRef, LayerProfile, ModelSpec
from moe_offload.simulator import (
    ABLATION_GRID,
    CacheState,
    LayerLRU,
    SimConfig,
    check_timeline,
    compare_policies,
    lru_insert,
    lru_touch,
    simulate_trace,
    tile_pipeline_latency,
)
from moe_offload.workload import SynthConfig, generate_trace

from conftest import make_token


def top1_trace(choices, n=4, dim=2):
    """Tokens whose layer l picks expert choices[j][l] under top-1 routing."""
    toks = []
    for j, row in enumerate(choices):
        layers = []
        for e in row:
            s = [0.3 / (n - 1)] * n
            s[e] = 0.7
            layers.append(s)
        toks.append(make_token(j, layers, k=1, dim=dim))
    return toks


def flat_profiles(L, alpha=0.0, beta=0.0, fisher=1.0):
    return [LayerProfile(alpha, beta, fisher)] * L


def test_lru_examples():
    lru = LayerLRU(2)
    assert lru.insert("A") is None
    assert lru.insert("B") is None
    assert lru.insert("C") == "A"

    lru = LayerLRU(2)
    lru.insert("A")
    lru.insert("B")
    assert lru.touch("A")
    assert lru.insert("C") == "B"

    lru = LayerLRU(2)
    lru.insert("A")
    lru.insert("B")
    lru.touch("B")
    assert lru.insert("C") == "A"

    zero = LayerLRU(0)
    assert zero.insert("A") == "A" and len(zero) == 0


def test_lru_on_cache_state():
    cache = CacheState(Allocation((1, 2), 3))
    assert lru_insert(cache, ExpertRef(0, 3)) is None
    assert lru_insert(cache, ExpertRef(0, 5)) == ExpertRef(0, 3)
    assert lru_touch(cache, ExpertRef(0, 5))
    assert not lru_touch(cache, ExpertRef(1, 5))
    assert ExpertRef(0, 5) in cache


def test_tile_formula_examples():
    assert tile_pipeline_latency(1, 3, 2) == 5
    assert tile_pipeline_latency(4, 1, 1) == 5
    assert tile_pipeline_latency(1, 4, 4) == 8
    assert tile_pipeline_latency(6, 2, 0) == 12
    assert tile_pipeline_latency(3, 1, 4) == 13
    with pytest.raises(DomainError):
        tile_pipeline_latency(0, 1, 1)


@pytest.mark.parametrize("n,tau,c", [(1, 4, 4), (4, 1, 1), (3, 2, 5), (5, 3, 0), (2, 0, 3)])
def test_single_streamed_expert_matches_formula(n, tau, c):
    spec = ModelSpec(1, 4, 1, 2)
    cfg = SimConfig(
        tile_count_per_expert=n, tile_transfer_time=tau, tile_compute_time=c,
        attention_compute_time=0, gate_compute_time=0, prefetch=False,
    )
    res = simulate_trace(top1_trace([[2]]), spec, flat_profiles(1), Allocation((0,), 0), 0.0, cfg)
    assert res.metrics.per_token_latency == (tile_pipeline_latency(n, tau, c),)
    assert res.metrics.on_demand_loads == 1


def test_fully_resident_never_stalls(small_workload, small_spec):
    _, traces, gates = small_workload
    L, N = small_spec.num_layers, small_spec.experts_per_layer
    cfg = SimConfig(adaptive_gating=False)
    # the first pass loads every expert once; the replayed second pass moves nothing
    res = simulate_trace(traces * 2, small_spec, flat_profiles(L), Allocation((N,) * L, L * N), 0.0, cfg, gates=gates)
    per_layer = cfg.attention_compute_time + cfg.gate_compute_time + 2 * cfg.expert_compute_time
    second_half = res.metrics.per_token_latency[len(traces):]
    assert all(t == L * per_layer for t in second_half)


def test_fully_resident_preloaded_latency():
    # every expert selected is already resident because all N slots were warmed by an earlier pass
    spec = ModelSpec(2, 2, 2, 2)
    toks = [make_token(j, [[0.6, 0.4], [0.3, 0.7]], dim=2) for j in range(3)]
    cfg = SimConfig(adaptive_gating=False, prefetch=False)
    res = simulate_trace(toks, spec, flat_profiles(2), Allocation((2, 2), 4), 0.0, cfg)
    per_token = 2 * (cfg.attention_compute_time + cfg.gate_compute_time + 2 * cfg.expert_compute_time)
    assert res.metrics.per_token_latency[1:] == (per_token, per_token)
    assert res.metrics.on_demand_loads == 4


def test_serialized_load_without_cache_or_prefetch():
    spec = ModelSpec(1, 4, 1, 2)
    cfg = SimConfig(tile_count_per_expert=1, tile_transfer_time=7, tile_compute_time=2,
                    attention_compute_time=3, gate_compute_time=1, prefetch=False)
    res = simulate_trace(top1_trace([[0], [1]]), spec, flat_profiles(1), Allocation((0,), 0), 0.0, cfg)
    assert res.metrics.per_token_latency == (3 + 1 + 7 + 2,) * 2
    assert res.metrics.stall_time == 14


def test_perfect_prefetch_hides_transfers():
    spec = ModelSpec(4, 8, 1, 16)
    cfg_w = SynthConfig(spec=spec, tokens=60, residual_drift=0.0, shared_gates=True)
    traces, _ = generate_trace(cfg_w)
    cfg = SimConfig(tile_count_per_expert=4, tile_transfer_time=1, tile_compute_time=1,
                    attention_compute_time=4, gate_compute_time=1, lookahead_depth=1)
    res = simulate_trace(traces, spec, flat_profiles(4, beta=1.0), Allocation((1,) * 4, 4), 0.0, cfg, seed=3)
    assert all(t > 0 for t in res.metrics.per_token_latency)
    per_layer = 4 + 1 + 4
    assert res.metrics.per_token_latency[1:] == (4 * per_layer,) * (len(traces) - 1)
    # only the very first expert of the run is loaded on demand
    assert res.metrics.on_demand_loads == 1
    assert check_timeline(res) == []


def test_on_demand_tiles_jump_ahead_of_prefetch():
    spec = ModelSpec(2, 4, 1, 2)
    cfg = SimConfig(tile_count_per_expert=4, tile_transfer_time=5, tile_compute_time=1,
                    attention_compute_time=2, gate_compute_time=0, lookahead_depth=1)
    profiles = [LayerProfile(0.0, 1.0, 1.0), LayerProfile(0.0, 0.0, 1.0)]
    res = simulate_trace(top1_trace([[0, 1], [2, 3]]), spec, profiles, Allocation((1, 1), 2), 0.0, cfg)
    comm = [e for e in res.timeline if e.stream == "comm" and e.token == 0]
    # layer 0 on demand, then one tile of the (wrong) layer-1 prefetch
    assert [(e.kind, e.layer) for e in comm[:5]] == [("transfer", 0)] * 4 + [("prefetch", 1)]
    wrong = comm[4]
    assert wrong.expert != 1 and (wrong.start, wrong.end) == (22, 27)
    # the layer-1 miss arrives at 25 and takes the wire at the next tile boundary
    need = [e for e in comm if e.kind == "transfer" and e.layer == 1 and e.expert == 1]
    assert [e.start for e in need] == [27, 32, 37, 42]
    resumed = [e for e in comm if e.job == wrong.job]
    assert resumed[1].start == 47
    assert check_timeline(res) == []


def test_late_prefetch_counts_as_load():
    spec = ModelSpec(2, 4, 1, 2)
    cfg = SimConfig(tile_count_per_expert=4, tile_transfer_time=5, tile_compute_time=1,
                    attention_compute_time=2, gate_compute_time=0, lookahead_depth=1)
    profiles = flat_profiles(2, beta=1.0)
    res = simulate_trace(top1_trace([[0, 1]]), spec, profiles, Allocation((1, 1), 2), 0.0, cfg)
    m = res.metrics
    assert m.on_demand_loads == 2 and m.late_prefetches == 1 and m.prefetch_hits == 0
    assert check_timeline(res) == []


def test_invariants_and_replay(small_workload, small_spec):
    _, traces, gates = small_workload
    L = small_spec.num_layers
    profiles = flat_profiles(L, alpha=0.2, beta=0.8)
    for gating, pf, caps in [(True, True, (3, 2, 1, 0)), (False, True, (8, 0, 0, 4)), (True, False, (2, 2, 2, 2))]:
        cfg = SimConfig(adaptive_gating=gating, prefetch=pf)
        alloc = Allocation(caps, sum(caps))
        a = simulate_trace(traces, small_spec, profiles, alloc, 0.05, cfg, seed=4, gates=gates)
        b = simulate_trace(traces, small_spec, profiles, alloc, 0.05, cfg, seed=4, gates=gates)
        assert check_timeline(a) == []
        assert a.metrics == b.metrics
        c = simulate_trace(traces, small_spec, profiles, alloc, 0.05, cfg, seed=4)
        assert check_timeline(c) == []


def test_gating_counting_identity(small_workload, small_spec):
    _, traces, gates = small_workload
    L = small_spec.num_layers
    cfg = SimConfig()
    alloc = Allocation((2,) * L, 2 * L)
    res = simulate_trace(traces, small_spec, flat_profiles(L), alloc, 0.05, cfg, gates=gates)
    m = res.metrics
    assert m.experts_activated_total == 2 * len(traces) * L - m.single_expert_decisions


def test_timeline_export(tmp_path, small_workload, small_spec):
    _, traces, gates = small_workload
    L = small_spec.num_layers
    res = simulate_trace(traces[:5], small_spec, flat_profiles(L), Allocation((1,) * L, L), 0.0, SimConfig(), gates=gates)
    path = tmp_path / "tl.jsonl"
    res.write_timeline(path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(rows) == len(res.timeline)
    assert set(rows[0]) == {"stream", "kind", "start", "end", "expert", "token", "layer"}


def test_bad_inputs(small_workload, small_spec):
    _, traces, _ = small_workload
    with pytest.raises(DomainError):
        simulate_trace([], small_spec, flat_profiles(4), Allocation((0,) * 4, 0), 0.0, SimConfig())
    with pytest.raises(DomainError):
        simulate_trace(traces, small_spec, flat_profiles(3), Allocation((0,) * 4, 0), 0.0, SimConfig())
    with pytest.raises(DomainError):
        SimConfig(tile_transfer_time=-1)
    with pytest.raises(DomainError):
        SimConfig(lookahead_depth=4)


def test_compare_grid(small_workload, small_spec):
    _, traces, gates = small_workload
    L = small_spec.num_layers
    profiles = [LayerProfile(0.1 * i, 0.6 + 0.1 * i, 1.0) for i in range(L)]
    rows = compare_policies(traces[:50], small_spec, profiles, 12, 0.05, SimConfig(), gates=gates)
    assert [r.name for r in rows] == [g[0] for g in ABLATION_GRID]
    assert rows[0].speedup == 1.0
    base = compare_policies(traces[:50], small_spec, profiles, 12, 0.05, SimConfig(), grid=[ABLATION_GRID[0]] * 2)
    assert [r.speedup for r in base] == [1.0, 1.0]
