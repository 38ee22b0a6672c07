"""Command-line pipeline: generate -> calibrate -> profile -> allocate -> simulate -> compare -> report."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from .allocator import dp_allocate
from .cache_model import build_cost_table
from .core import DomainError, LayerProfile, ModelSpec, trace_arrays, uniform_allocation, validate_trace
from .gating import calibrate_threshold, perturbation_matrix, single_ratio
from .prefetch import TrainingConfig, first_layer_pairs, top1_accuracy, train_predictive_gate
from .simulator import ABLATION_GRID, SimConfig, compare_policies, policy_allocation, simulate_trace
from .workload import (
    HETEROGENEOUS_DRIFT,
    HETEROGENEOUS_FISHER,
    ProfileBundle,
    SynthConfig,
    WorkloadError,
    adjacent_cosine,
    generate_profiles,
    generate_trace,
    heterogeneous_scales,
    load_allocation,
    load_gates,
    load_profiles,
    load_threshold,
    load_trace,
    mean_reuse_beta,
    profile_hash,
    save_allocation,
    save_cost_table,
    save_gates,
    save_profiles,
    save_threshold,
    save_trace,
    tune_drift,
)

log = logging.getLogger("moe_offload")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_BAD_INPUT = 4
EXIT_BAD_CONFIG = 5
EXIT_INFEASIBLE = 6

EXIT_CODES_HELP = """\
exit codes:
  0  success
  1  unexpected internal error
  2  usage error (bad or missing flags)
  3  an input file does not exist
  4  an input file is malformed, has the wrong schema/format_version, or fails trace validation
  5  an option value is out of range (e.g. negative duration, ratio outside [0,1])
  6  infeasible cache budget (negative)
"""


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


# ----------------------------------------------------------------------------- helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _manifest(args, inputs: dict, outputs: dict, seeds: dict, config: dict) -> dict:
    return {
        "tool_version": __version__,
        "command": args.command,
        "inputs": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in inputs.items() if v},
        "outputs": {k: str(v) for k, v in outputs.items() if v},
        "seeds": seeds,
        "config_hash": _config_hash(config),
        "created_at": datetime.now(timezone.utc).isoformat(),
    }


def _write_json(path, obj) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def _write_csv(path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def _need(path, what: str) -> Path:
    if path is None:
        raise CliError(EXIT_USAGE, f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_MISSING_FILE, f"{what} file not found: {p}")
    return p


def _load_trace_checked(path):
    spec, traces = load_trace(_need(path, "trace"))
    report = validate_trace(traces, spec)
    if not report.ok:
        shown = "; ".join(report.violations[:5])
        raise CliError(EXIT_BAD_INPUT, f"{path}: {len(report.violations)} trace violations: {shown}")
    if not traces:
        raise CliError(EXIT_BAD_INPUT, f"{path}: trace has no tokens")
    return spec, traces


def _same_spec(a: ModelSpec, b: ModelSpec, what: str) -> None:
    if a != b:
        raise CliError(EXIT_BAD_INPUT, f"{what} was produced for {b}, trace is {a}")


def _resolve_tau(args, bundle: ProfileBundle | None = None) -> float:
    """--threshold file, then --tau, then the tau the profile was built with, then 0."""
    if getattr(args, "threshold", None):
        return load_threshold(_need(args.threshold, "threshold"))
    if getattr(args, "tau", None) is not None:
        if args.tau < 0:
            raise CliError(EXIT_BAD_CONFIG, "tau must be >= 0")
        return float(args.tau)
    if bundle is not None and bundle.tau is not None:
        return float(bundle.tau)
    return 0.0


def _sim_config(args) -> SimConfig:
    return SimConfig(
        tile_count_per_expert=args.tiles,
        tile_transfer_time=args.tile_transfer,
        tile_compute_time=args.tile_compute,
        attention_compute_time=args.attention,
        gate_compute_time=args.gate_time,
        lookahead_depth=args.lookahead,
        adaptive_gating=not args.no_gating,
        prefetch=not args.no_prefetch,
        adaptive_cache=not args.uniform_cache,
    )


def _sim_config_dict(cfg: SimConfig) -> dict:
    return asdict(cfg)


def _optional_gates(args, spec):
    if not getattr(args, "gates", None):
        return None
    gspec, gates = load_gates(_need(args.gates, "gates"))
    _same_spec(spec, gspec, "gates")
    return gates


def _check_budget(budget: int, spec: ModelSpec) -> int:
    if budget < 0:
        raise CliError(EXIT_INFEASIBLE, f"budget {budget} is negative")
    cap = spec.num_layers * spec.experts_per_layer
    if budget > cap:
        log.warning("budget %d exceeds L*N = %d; clamping to %d", budget, cap, cap)
        return cap
    return budget


# ----------------------------------------------------------------------------- commands


def _require(args, *names: str) -> None:
    for n in names:
        if getattr(args, n, None) is None:
            raise CliError(EXIT_USAGE, f"--{n.replace('_', '-')} is required")


def cmd_generate(args) -> int:
    _require(args, "trace_out", "gates_out")
    spec = ModelSpec(args.layers, args.experts, args.top_k, args.hidden_dim)
    scales = {}
    if args.heterogeneous:
        scales = {
            "fisher_scale": heterogeneous_scales(spec.num_layers, *HETEROGENEOUS_FISHER),
            "drift_scale": heterogeneous_scales(spec.num_layers, *HETEROGENEOUS_DRIFT),
        }
    cfg = SynthConfig(
        spec=spec,
        tokens=args.tokens,
        dirichlet_concentration=args.concentration,
        residual_drift=args.drift,
        gate_seed=args.gate_seed,
        token_seed=args.token_seed,
        fisher_base=args.fisher_base,
        token_carryover=args.carryover,
        shared_gates=args.shared_gates,
        **scales,
    )
    if args.target_beta is not None:
        eps, beta = tune_drift(cfg, args.target_beta)
        log.info("tuned drift %.6g -> mean reuse accuracy %.4f", eps, beta)
        cfg = replace(cfg, residual_drift=eps)
    traces, gates = generate_trace(cfg)
    save_trace(args.trace_out, traces, spec)
    save_gates(args.gates_out, gates, spec)
    if args.profile_out:
        # fisher sums only; single-expert and prefetch rates come from `profile`
        seed_profiles = [LayerProfile(0.0, 0.0, f) for f in cfg.fisher()]
        save_profiles(args.profile_out, ProfileBundle(spec, seed_profiles, extra={"synth": cfg.to_dict()}))
    cos = adjacent_cosine(traces)
    print(json.dumps({"tokens": len(traces), "drift": cfg.residual_drift, "mean_adjacent_cosine": float(cos.mean())}))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    _require(args, "out")
    spec, traces = _load_trace_checked(args.trace)
    bundle = load_profiles(_need(args.profile, "profile"))
    _same_spec(spec, bundle.spec, "profile")
    if not 0.0 <= args.target <= 1.0:
        raise CliError(EXIT_BAD_CONFIG, "--target must lie in [0, 1]")
    tau = calibrate_threshold(traces, bundle.profiles, args.target).tau
    realized = single_ratio(traces, bundle.profiles, tau)
    save_threshold(args.out, tau, target_single_ratio=args.target, realized_single_ratio=realized)
    print(json.dumps({"tau": tau, "target": args.target, "realized": realized}))
    return EXIT_OK


def cmd_profile(args) -> int:
    _require(args, "out")
    spec, traces = _load_trace_checked(args.trace)
    gspec, gates = load_gates(_need(args.gates, "gates"))
    _same_spec(spec, gspec, "gates")
    fisher_bundle = load_profiles(_need(args.fisher_profile, "fisher-profile"))
    _same_spec(spec, fisher_bundle.spec, "fisher profile")
    fisher = [p.fisher_diag_sum for p in fisher_bundle.profiles]
    tau = _resolve_tau(args)
    pg = None
    extra = dict(fisher_bundle.extra)
    if not args.no_predictive and len(traces) > 1:
        x, y = first_layer_pairs(traces)
        tc = TrainingConfig(args.lr, args.steps, args.train_seed)
        pg = train_predictive_gate(x, y, tc)
        extra["predictive_gate_train"] = {
            "initial_loss": pg.loss_history[0],
            "final_loss": pg.loss_history[-1],
            "top1_accuracy": top1_accuracy(pg, x, y),
        }
    profiles = generate_profiles(traces, gates, tau, spec, fisher, pg)
    save_profiles(args.out, ProfileBundle(spec, profiles, tau, pg, extra))
    print(
        json.dumps(
            {
                "tau": tau,
                "single_expert_prob": [p.single_expert_prob for p in profiles],
                "prefetch_accuracy": [p.prefetch_accuracy for p in profiles],
                "mean_reuse_accuracy": mean_reuse_beta(profiles),
            }
        )
    )
    return EXIT_OK


def cmd_allocate(args) -> int:
    _require(args, "budget", "out")
    bundle = load_profiles(_need(args.profile, "profile"))
    spec = bundle.spec
    budget = _check_budget(args.budget, spec)
    table = build_cost_table(bundle.profiles, spec)
    if args.uniform:
        alloc = uniform_allocation(spec, budget)
        total = table.total(alloc.capacities)
    else:
        alloc, total = dp_allocate(table, budget, spec)
    save_allocation(args.out, alloc, total, profile_hash(bundle.profiles))
    if args.costs_out:
        save_cost_table(args.costs_out, table)
    print(json.dumps({"budget": budget, "capacities": list(alloc.capacities), "total_cost": total}))
    return EXIT_OK


def _load_sim_inputs(args):
    spec, traces = _load_trace_checked(args.trace)
    bundle = load_profiles(_need(args.profile, "profile"))
    _same_spec(spec, bundle.spec, "profile")
    gates = _optional_gates(args, spec)
    return spec, traces, bundle, gates


def cmd_simulate(args) -> int:
    _require(args, "out")
    spec, traces, bundle, gates = _load_sim_inputs(args)
    alloc, _, _ = load_allocation(_need(args.allocation, "allocation"))
    try:
        alloc.check(spec)
    except DomainError as exc:
        raise CliError(EXIT_INFEASIBLE, f"allocation infeasible: {exc}") from None
    tau = _resolve_tau(args, bundle)
    cfg = _sim_config(args)
    res = simulate_trace(
        traces, spec, bundle.profiles, alloc, tau, cfg, args.seed,
        gates=gates, predictive_gate=bundle.predictive_gate,
        record_timeline=bool(args.timeline_out),
    )
    if args.timeline_out:
        res.write_timeline(args.timeline_out)
    inputs = {"trace": args.trace, "profile": args.profile, "allocation": args.allocation, "gates": args.gates}
    config = {"sim": _sim_config_dict(cfg), "tau": tau, "capacities": list(alloc.capacities)}
    out = {
        "manifest": _manifest(
            args, inputs, {"metrics": args.out, "csv": args.csv_out, "timeline": args.timeline_out},
            {"seed": args.seed}, config,
        ),
        "config": config,
        "metrics": res.metrics.to_dict(),
    }
    _write_json(args.out, out)
    if args.csv_out:
        _write_csv(args.csv_out, [res.metrics.summary()], list(res.metrics.summary()))
    print(json.dumps(res.metrics.summary()))
    return EXIT_OK


COMPARE_COLUMNS = (
    "technique", "adaptive_gating", "prefetch", "adaptive_cache", "mean_latency", "speedup",
    "on_demand_loads", "late_prefetches", "stall_time", "cache_hits", "prefetch_hits", "prefetch_issued",
    "experts_activated_total", "single_expert_decisions",
)


def _grid(name: str):
    if name == "all":
        return ABLATION_GRID
    wanted = [g.strip() for g in name.split(",")]
    rows = [r for r in ABLATION_GRID if r[0] in wanted]
    if not rows or rows[0][0] != "baseline":
        rows = [ABLATION_GRID[0]] + [r for r in rows if r[0] != "baseline"]
    unknown = set(wanted) - {r[0] for r in ABLATION_GRID}
    if unknown:
        raise CliError(EXIT_BAD_CONFIG, f"unknown grid rows: {sorted(unknown)}")
    return tuple(rows)


def _run_compare(args, spec, traces, bundle, gates, tau):
    budget = _check_budget(args.budget, spec)
    cfg = _sim_config(args)
    rows = compare_policies(
        traces, spec, bundle.profiles, budget, tau, cfg, args.seed,
        grid=_grid(args.grid), gates=gates, predictive_gate=bundle.predictive_gate,
    )
    return budget, cfg, rows


def cmd_compare(args) -> int:
    _require(args, "budget", "out")
    spec, traces, bundle, gates = _load_sim_inputs(args)
    tau = _resolve_tau(args, bundle)
    budget, cfg, rows = _run_compare(args, spec, traces, bundle, gates, tau)
    config = {"sim": _sim_config_dict(cfg), "tau": tau, "budget": budget, "grid": args.grid}
    out = {
        "manifest": _manifest(
            args, {"trace": args.trace, "profile": args.profile, "gates": args.gates},
            {"json": args.out, "csv": args.csv_out}, {"seed": args.seed}, config,
        ),
        "config": config,
        "rows": [r.to_dict() for r in rows],
    }
    _write_json(args.out, out)
    if args.csv_out:
        _write_csv(args.csv_out, [r.to_dict() for r in rows], COMPARE_COLUMNS)
    for r in rows:
        print(f"{r.name:<18} latency={r.metrics.mean_latency:9.2f} speedup={r.speedup:5.3f} loads={r.metrics.on_demand_loads}")
    return EXIT_OK


def cmd_report(args) -> int:
    _require(args, "out_dir")
    spec, traces, bundle, gates = _load_sim_inputs(args)
    tau = _resolve_tau(args, bundle)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    profiles = bundle.profiles
    N = spec.experts_per_layer

    # threshold vs single-expert ratio
    _, scores = trace_arrays(traces)
    pert = perturbation_matrix(scores, [p.fisher_diag_sum for p in profiles])
    sweep = []
    for i in range(21):
        target = i / 20
        t = calibrate_threshold(traces, profiles, target).tau
        single = pert <= t
        sweep.append(
            {
                "target_single_ratio": target,
                "tau": t,
                "single_ratio": float(single.mean()),
                "mean_experts_per_layer": float((spec.top_k - (spec.top_k - 1) * single).mean()),
            }
        )
    _write_csv(out_dir / "threshold_sweep.csv", sweep, list(sweep[0]))

    beta_rows = [
        {"layer": i, "prefetch_accuracy": p.prefetch_accuracy, "single_expert_prob": p.single_expert_prob,
         "fisher_diag_sum": p.fisher_diag_sum}
        for i, p in enumerate(profiles)
    ]
    _write_csv(out_dir / "layer_profile.csv", beta_rows, list(beta_rows[0]))

    if args.allocation:
        alloc, _, _ = load_allocation(_need(args.allocation, "allocation"))
        alloc.check(spec)
    else:
        _require(args, "budget")
        budget = _check_budget(args.budget, spec)
        alloc = policy_allocation(spec, profiles, budget, True, True, True)
    table = build_cost_table(profiles, spec)
    alloc_rows = [
        {"layer": i, "capacity": t, "expected_loads_per_token": float(table.f[i, t])}
        for i, t in enumerate(alloc.capacities)
    ]
    _write_csv(out_dir / "allocation.csv", alloc_rows, list(alloc_rows[0]))

    # closed-form (random-cache) prediction vs the LRU simulator, all techniques on
    cfg = _sim_config(args).with_policy(True, True, True)
    res = simulate_trace(
        traces, spec, profiles, alloc, tau, cfg, args.seed,
        gates=gates, predictive_gate=bundle.predictive_gate, record_timeline=False,
    )
    n_tok = len(traces)
    gap_rows = []
    for i, t in enumerate(alloc.capacities):
        predicted = float(table.f[i, t]) * n_tok
        realized = res.metrics.per_layer_loads[i]
        late = res.metrics.per_layer_late[i]
        gap_rows.append(
            {
                "layer": i,
                "capacity": t,
                "alpha": profiles[i].single_expert_prob,
                "beta": profiles[i].prefetch_accuracy,
                "predicted_loads": predicted,
                "realized_loads": realized,
                "late_prefetch_loads": late,
                "realized_excluding_late": realized - late,
                "gap": realized - predicted,
                "relative_gap": (realized - predicted) / predicted if predicted > 0 else None,
            }
        )
    _write_csv(out_dir / "model_vs_simulator.csv", gap_rows, list(gap_rows[0]))

    args.budget = args.budget if args.budget is not None else alloc.used
    budget, _, rows = _run_compare(args, spec, traces, bundle, gates, tau)
    _write_csv(out_dir / "ablation.csv", [r.to_dict() for r in rows], COMPARE_COLUMNS)

    pred_total = sum(r["predicted_loads"] for r in gap_rows)
    real_total = sum(r["realized_loads"] for r in gap_rows)
    late_total = sum(r["late_prefetch_loads"] for r in gap_rows)
    config = {"sim": _sim_config_dict(cfg), "tau": tau, "capacities": list(alloc.capacities), "budget": budget}
    summary = {
        "manifest": _manifest(
            args, {"trace": args.trace, "profile": args.profile, "gates": args.gates, "allocation": args.allocation},
            {"dir": out_dir}, {"seed": args.seed}, config,
        ),
        "config": config,
        "model_vs_simulator": {
            "predicted_total_loads": pred_total,
            "realized_total_loads": real_total,
            "relative_gap": (real_total - pred_total) / pred_total if pred_total > 0 else None,
            "late_prefetch_loads": late_total,
            "relative_gap_excluding_late": (real_total - late_total - pred_total) / pred_total
            if pred_total > 0
            else None,
            "note": "prediction assumes a uniformly random cache of t experts and instant prefetch; "
            "the simulator runs LRU caches and counts late prefetches as on-demand loads",
            "per_layer": gap_rows,
        },
        "files": sorted(p.name for p in out_dir.glob("*.csv")),
    }
    _write_json(out_dir / "report.json", summary)
    print(json.dumps({k: v for k, v in summary["model_vs_simulator"].items() if k != "per_layer"}))
    return EXIT_OK


# ----------------------------------------------------------------------------- parser


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("simulation")
    g.add_argument("--tiles", type=int, default=4, help="tiles per expert")
    g.add_argument("--tile-transfer", type=int, default=3, help="ticks to move one tile")
    g.add_argument("--tile-compute", type=int, default=1, help="ticks to compute one tile")
    g.add_argument("--attention", type=int, default=6, help="attention ticks per layer")
    g.add_argument("--gate-time", type=int, default=1, help="gate ticks per layer")
    g.add_argument("--lookahead", type=int, default=2, choices=range(0, 4), help="prefetch lookahead depth")
    g.add_argument("--no-gating", action="store_true", help="fixed top-k routing")
    g.add_argument("--no-prefetch", action="store_true")
    g.add_argument("--uniform-cache", action="store_true")
    g.add_argument("--seed", type=int, default=0)


def _add_tau_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threshold", help="threshold JSON from `calibrate`")
    p.add_argument("--tau", type=float, help="explicit gating threshold (ignored if --threshold is given)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moe-offload",
        description="Adaptive gating, prefetching and cache allocation for offloaded MoE inference.",
        epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", help="JSON file whose keys supply defaults for any flag")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")

    def add(name, help_):
        p = sub.add_parser(name, help=help_, epilog=EXIT_CODES_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help=argparse.SUPPRESS)
        return p

    p = add("generate", "synthesise a routing trace, gate matrices and a fisher profile")
    p.add_argument("--layers", type=int, default=8)
    p.add_argument("--experts", type=int, default=8)
    p.add_argument("--top-k", type=int, default=2)
    p.add_argument("--hidden-dim", type=int, default=32)
    p.add_argument("--tokens", type=int, default=1000)
    p.add_argument("--concentration", type=float, default=0.5, help="lower = more skewed gate scores")
    p.add_argument("--drift", type=float, default=0.3, help="residual drift between layers")
    p.add_argument("--target-beta", type=float, help="tune drift so the mean reuse accuracy hits this value")
    p.add_argument("--gate-seed", type=int, default=0)
    p.add_argument("--token-seed", type=int, default=1)
    p.add_argument("--fisher-base", type=float, default=1.0)
    p.add_argument("--carryover", type=float, default=0.9, help="previous token's share in the next first-layer input")
    p.add_argument("--heterogeneous", action="store_true", help="early layers: higher sensitivity and drift")
    p.add_argument("--shared-gates", action="store_true")
    p.add_argument("--trace-out")
    p.add_argument("--gates-out")
    p.add_argument("--profile-out", help="profile file carrying the per-layer fisher sums")
    p.set_defaults(func=cmd_generate)

    p = add("calibrate", "pick the gating threshold that reaches a single-expert ratio")
    p.add_argument("--trace")
    p.add_argument("--profile", help="profile file providing fisher sums")
    p.add_argument("--target", type=float, default=0.24)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = add("profile", "measure per-layer single-expert and prefetch accuracy")
    p.add_argument("--trace")
    p.add_argument("--gates")
    p.add_argument("--fisher-profile", help="profile file providing fisher sums (e.g. from generate)")
    _add_tau_flags(p)
    p.add_argument("--no-predictive", action="store_true", help="skip training the first-layer predictive gate")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--train-seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_profile)

    p = add("allocate", "DP cache allocation from a profile")
    p.add_argument("--profile")
    p.add_argument("--budget", type=int)
    p.add_argument("--uniform", action="store_true", help="equal split instead of DP")
    p.add_argument("--out")
    p.add_argument("--costs-out", help="also write the cost table")
    p.set_defaults(func=cmd_allocate)

    p = add("simulate", "replay a trace through the two-stream simulator")
    p.add_argument("--trace")
    p.add_argument("--gates", help="gate matrices for gate-reuse prediction (else sampled from profile accuracy)")
    p.add_argument("--profile")
    p.add_argument("--allocation")
    _add_tau_flags(p)
    _add_sim_flags(p)
    p.add_argument("--out", help="metrics JSON")
    p.add_argument("--csv-out")
    p.add_argument("--timeline-out", help="JSON Lines event timeline")
    p.set_defaults(func=cmd_simulate)

    p = add("compare", "ablation grid of gating / prefetch / cache techniques")
    p.add_argument("--trace")
    p.add_argument("--gates")
    p.add_argument("--profile")
    p.add_argument("--budget", type=int)
    p.add_argument("--grid", default="all", help="'all' or comma-separated row names")
    _add_tau_flags(p)
    _add_sim_flags(p)
    p.add_argument("--out")
    p.add_argument("--csv-out")
    p.set_defaults(func=cmd_compare)

    p = add("report", "plot-ready tables: sweeps, profiles, allocation, ablation, model-vs-simulator gap")
    p.add_argument("--trace")
    p.add_argument("--gates")
    p.add_argument("--profile")
    p.add_argument("--allocation")
    p.add_argument("--budget", type=int)
    p.add_argument("--grid", default="all")
    _add_tau_flags(p)
    _add_sim_flags(p)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_report)
    return parser


def _config_defaults(argv: Sequence[str]) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    path = Path(known.config)
    if not path.exists():
        raise CliError(EXIT_MISSING_FILE, f"config file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_BAD_INPUT, f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise CliError(EXIT_BAD_INPUT, f"{path}: config must be a JSON object")
    return {k.replace("-", "_"): v for k, v in obj.items()}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    try:
        defaults = _config_defaults(argv)
        parser = build_parser()
        if defaults:
            # flags on the command line still win: set_defaults only fills unset values
            for action in parser._subparsers._group_actions:  # noqa: SLF001
                for sp in action.choices.values():
                    known = {a.dest for a in sp._actions}
                    sp.set_defaults(**{k: v for k, v in defaults.items() if k in known})
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        return args.func(args)
    except CliError as exc:
        log.error("%s", exc)
        return exc.code
    except FileNotFoundError as exc:
        log.error("file not found: %s", exc.filename or exc)
        return EXIT_MISSING_FILE
    except WorkloadError as exc:
        log.error("%s", exc)
        return EXIT_BAD_INPUT
    except (DomainError, ValueError) as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_BAD_CONFIG


if __name__ == "__main__":
    sys.exit(main())
