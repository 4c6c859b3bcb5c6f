"""Command line front end: simulate, plan, verify, bench, raster-data."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .decomposition import dump_plan
from .engine import EngineError
from .exchange import ExchangeError, run_distributed
from .netbuild import (ConfigError, area_tags, build_network, dump_config, load_config,
                       load_connectome, make_balanced_random_net, plan_network, scale_config)
from .reference import run_reference


def _add_common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="network config (YAML)")
    p.add_argument("--connectome", help="area x area weight CSV")
    p.add_argument("--distances", help="area x area distance CSV (mm)")
    p.add_argument("--ranks", type=int, help="rank count (overrides config)")
    p.add_argument("--threads", type=int, help="threads per rank (overrides config)")
    p.add_argument("--seed", type=int, help="network seed (overrides config)")
    p.add_argument("--steps", type=int, help="steps to simulate (overrides config t_sim)")
    p.add_argument("--out-dir", help="output directory (overrides config)")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cortex-sim", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a network and write raster and stats")
    _add_common(p)
    p.add_argument("--audit", action="store_true", help="check single-thread ownership")
    p.add_argument("--no-overlap", action="store_true", help="exchange inline, no agent thread")
    p.add_argument("--latency", type=float, default=0.0, help="injected fabric latency (s)")
    p.add_argument("--trace", action="store_true", help="write per-step phase timelines")

    p = sub.add_parser("plan", help="write the partition plan")
    _add_common(p)
    p.add_argument("--mapping", choices=("area", "random"), help="mapping strategy")

    p = sub.add_parser("verify", help="compare the engine with the serial reference")
    _add_common(p)
    p.add_argument("--scale", type=float, default=1.0, help="population count factor")
    p.add_argument("--no-overlap", action="store_true")
    p.add_argument("--perturb-edge", type=int, default=None,
                   help="nudge one engine weight by one ulp (checks the checker)")
    p.add_argument("--perturb-factor", type=float, default=None,
                   help="with --perturb-edge, multiply the weight by this instead")

    p = sub.add_parser("bench", help="timing and memory table over network sizes")
    _add_common(p, config_required=False)
    p.add_argument("--sizes", default="0.25,0.5,1", help="comma-separated scale factors")
    p.add_argument("--base-neurons", type=int, default=1000,
                   help="neurons at scale 1 for the built-in balanced network")

    p = sub.add_parser("raster-data", help="split a raster into per-area plot data")
    p.add_argument("--config", required=True)
    p.add_argument("--raster", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--bin-ms", type=float, default=5.0)
    p.add_argument("--steps", type=int)
    return ap


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.ranks is not None:
        cfg.decomposition.ranks = args.ranks
    if args.threads is not None:
        cfg.decomposition.threads = args.threads
    if args.out_dir is not None:
        cfg.output_dir = args.out_dir
    conn = None
    if args.connectome:
        conn = load_connectome(args.connectome, args.distances)
    elif args.distances:
        raise ConfigError("--distances needs --connectome")
    n_steps = args.steps if args.steps is not None else cfg.n_steps
    return cfg, conn, n_steps


def _plan(net, cfg, mapping=None):
    d = cfg.decomposition
    return plan_network(net, d.ranks, d.threads, mapping=mapping or d.mapping,
                        sample_rate=d.sample_rate, seed=cfg.seed)


def _rank_rows(res, n_steps, dt):
    rows = []
    for r, (mem, tl) in enumerate(zip(res.memory, res.timelines)):
        rows.append({"rank": r, **mem, "exchange_wait_s": round(tl.wait, 6),
                     "overlap_fraction": round(tl.overlap_fraction(), 4)})
    return rows


def cmd_simulate(args) -> int:
    cfg, conn, n_steps = _load(args)
    net = build_network(cfg, conn)
    plan = _plan(net, cfg)
    res = run_distributed(net, plan, n_steps, overlap=not args.no_overlap, audit=args.audit,
                          latency=args.latency, trace=args.trace)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_raster(out / "raster.txt", res.spikes, cfg.dt)
    io.write_stats_csv(out / "stats.csv", _rank_rows(res, n_steps, cfg.dt))
    summary = {"neurons": net.n_neurons, "edges": net.graph.n_edges, "steps": n_steps,
               "ranks": plan.n_ranks, "threads": plan.n_threads, "spikes": res.spikes.shape[0],
               "mean_rate_hz": round(res.rate_hz(net.n_neurons, n_steps, cfg.dt), 4),
               "synaptic_events": res.records_applied, "messages": res.messages_sent,
               "wall_s": round(res.wall_time, 4), "audit": args.audit,
               "overlap": not args.no_overlap}
    io.write_stats_csv(out / "summary.csv", [summary])
    (out / "resolved_config.yaml").write_text(dump_config(cfg))
    dump_plan(plan, out / "plan.txt")
    if args.trace:
        rows = []
        for r, tl in enumerate(res.timelines):
            rows += [{"rank": r, "phase": "compute", "step": s, "start_s": a, "end_s": b}
                     for s, a, b in tl.compute]
            rows += [{"rank": r, "phase": "exchange", "step": s, "start_s": a, "end_s": b}
                     for s, a, b in tl.exchange]
        io.write_stats_csv(out / "timeline.csv", rows)
    print(f"{res.spikes.shape[0]} spikes, {summary['mean_rate_hz']} Hz, "
          f"{res.wall_time:.2f} s -> {out}")
    return 0


def cmd_plan(args) -> int:
    cfg, conn, _ = _load(args)
    net = build_network(cfg, conn)
    plan = _plan(net, cfg, args.mapping)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_plan(plan, out / "plan.txt")
    print(f"plan for {plan.n_ranks} ranks x {plan.n_threads} threads -> {out / 'plan.txt'}")
    return 0


def cmd_verify(args) -> int:
    cfg, conn, n_steps = _load(args)
    if args.scale != 1.0:
        cfg = scale_config(cfg, args.scale)
    net = build_network(cfg, conn)
    plan = _plan(net, cfg)
    ref = run_reference(net, n_steps)
    if args.perturb_edge is not None:
        net.weights = net.weights.copy()
        e = args.perturb_edge
        if args.perturb_factor is None:
            net.weights[e] = np.nextafter(net.weights[e], np.inf)
        else:
            net.weights[e] *= args.perturb_factor
    res = run_distributed(net, plan, n_steps, overlap=not args.no_overlap)
    where = io.first_divergence(ref.spikes, res.spikes)
    if where is None and not np.array_equal(ref.weights, res.weights):
        bad = int(np.flatnonzero(ref.weights != res.weights)[0])
        print(f"MISMATCH: spike logs equal but weight of edge {bad} differs")
        return 1
    if where is not None:
        print(f"MISMATCH: first divergence at step {where[0]}, neuron {where[1]}")
        return 1
    print(f"OK: {ref.spikes.shape[0]} spikes over {n_steps} steps identical "
          f"({plan.n_ranks} ranks x {plan.n_threads} threads)")
    return 0


def cmd_bench(args) -> int:
    try:
        sizes = [float(x) for x in args.sizes.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--sizes: expected comma-separated numbers, got {args.sizes!r}")
    if not sizes or any(s <= 0 for s in sizes):
        raise ConfigError("--sizes: need positive scale factors")
    base = load_config(args.config) if args.config else None
    ranks = args.ranks or (base.decomposition.ranks if base else 2)
    threads = args.threads or (base.decomposition.threads if base else 2)
    rows = []
    for s in sizes:
        if base is not None:
            cfg = scale_config(base, s)
        else:
            cfg = make_balanced_random_net(s, n_per_scale=args.base_neurons, t_sim=100.0)
        if args.seed is not None:
            cfg.seed = args.seed
        n_steps = args.steps if args.steps is not None else cfg.n_steps
        t = time.perf_counter()
        net = build_network(cfg)
        build_s = time.perf_counter() - t
        plan = plan_network(net, ranks, threads, seed=cfg.seed)
        res = run_distributed(net, plan, n_steps)
        mem = res.memory
        rows.append({"scale": s, "neurons": net.n_neurons, "edges": net.graph.n_edges,
                     "steps": n_steps, "build_s": round(build_s, 4),
                     "sim_s": round(res.wall_time, 4),
                     "synaptic_events": res.records_applied,
                     "max_rank_pre": max(m["n_pre"] for m in mem),
                     "max_rank_edges": max(m["n_edges"] for m in mem),
                     "mean_rate_hz": round(res.rate_hz(net.n_neurons, n_steps, cfg.dt), 3)})
    keys = list(rows[0])
    print("  ".join(f"{k:>15}" for k in keys))
    for r in rows:
        print("  ".join(f"{r[k]!s:>15}" for k in keys))
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        io.write_stats_csv(Path(args.out_dir) / "bench.csv", rows)
    return 0


def cmd_raster_data(args) -> int:
    cfg = load_config(args.config)
    spikes = io.read_raster(args.raster, cfg.dt)
    tags = area_tags(cfg)
    if spikes.size and (spikes[:, 1].min() < 0 or spikes[:, 1].max() >= tags.size):
        raise ConfigError("raster contains neuron ids outside the configured network")
    n_steps = args.steps if args.steps is not None else cfg.n_steps
    files = io.write_raster_data(args.out_dir, spikes, tags, [a.name for a in cfg.areas],
                                 cfg.dt, n_steps, args.bin_ms)
    print(f"wrote {len(files)} files to {args.out_dir}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "plan": cmd_plan, "verify": cmd_verify,
            "bench": cmd_bench, "raster-data": cmd_raster_data}


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, EngineError, ExchangeError, io.RasterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
