"""Command-line pipeline: plan, optimize, simulate.

    hyperm plan <scenario.json> -o <dir>
    hyperm optimize <dir> --variant {1|2} [--max-cycles N] [--alpha0 A] [--seed S]
    hyperm simulate <dir> [--cycles N]

All outputs are plain CSV/JSON in the run directory; the log level comes
from the HYPERM_LOG environment variable (error, warn, info, debug).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import bilevel, rrbt, sequencer
from .errors import HypermError, ScenarioError, SolverError, UnreachableError
from .estimation import CovState, write_covariance_csv
from .scenario import Scenario, load_scenario
from .seeding import stream

log = logging.getLogger(__name__)

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    level = os.environ.get("HYPERM_LOG", "warn").lower()
    logging.basicConfig(
        level=_LOG_LEVELS.get(level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _json_dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _update_manifest(outdir: Path, stage: str, files, elapsed: float, seed, config):
    path = outdir / "manifest.json"
    manifest = {}
    if path.exists():
        with open(path) as fh:
            manifest = json.load(fh)
    manifest.setdefault("output_dir", str(outdir))
    stages = manifest.setdefault("stages", {})
    stages[stage] = {
        "files": sorted(str(f) for f in files),
        "wall_clock_s": elapsed,
        "seed": seed,
        "config": config,
    }
    _json_dump(manifest, path)
    for f in files:
        if not (outdir / f).exists():
            raise HypermError(f"manifest lists missing file {f}")


def write_trace_csv(path, trace: bilevel.TraceBundle):
    M = trace.tr.shape[0]
    cols = ",".join(f"tr_omega_{i}" for i in range(M))
    with open(path, "w") as fh:
        fh.write(f"t,x,y,region,ux,uy,{cols}\n")
        for i in range(len(trace.times)):
            tr = ",".join(repr(float(trace.tr[m, i])) for m in range(M))
            vals = (
                float(trace.times[i]), float(trace.positions[i, 0]), float(trace.positions[i, 1]),
            )
            us = (float(trace.controls[i, 0]), float(trace.controls[i, 1]))
            fh.write(
                f"{vals[0]!r},{vals[1]!r},{vals[2]!r},"
                f"{int(trace.regions[i])},{us[0]!r},{us[1]!r},{tr}\n"
            )


def cmd_plan(args) -> int:
    t0 = time.perf_counter()
    scenario = load_scenario(args.scenario)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    seed = scenario.seed if args.seed is None else args.seed
    P = len(scenario.partition)
    max_iter = args.rrbt_iters
    if max_iter is None:
        max_iter = int(scenario.planner.get("max_iter_per_region", 300)) * P
    files = ["scenario.json"]
    scenario.save(outdir / "scenario.json")
    if len(scenario.targets) >= 2:
        dist = rrbt.distance_matrix(
            scenario.targets,
            scenario.partition,
            max_iter,
            rng_for_tree=lambda i: stream(seed, "rrbt", i),
        )
        plan = sequencer.plan_cycle(scenario.targets, scenario.partition, dist)
        (outdir / "trees").mkdir(exist_ok=True)
        for i, tree in enumerate(dist.trees):
            name = f"trees/tree_{i}.json"
            _json_dump(tree.to_dict(), outdir / name)
            files.append(name)
    else:
        plan = sequencer.plan_cycle(scenario.targets, scenario.partition, None)
    _json_dump(
        sequencer.plan_to_dict(plan, scenario.partition, scenario.targets),
        outdir / "plan.json",
    )
    files.append("plan.json")
    _update_manifest(
        outdir, "plan", files, time.perf_counter() - t0, seed,
        {"rrbt_iters": max_iter},
    )
    print(f"plan: K={plan.K} sequence={list(plan.sequence.order)} -> {outdir}")
    return 0


def _load_run_dir(dirpath: Path):
    scenario = load_scenario(dirpath / "scenario.json")
    with open(dirpath / "plan.json") as fh:
        plan_data = json.load(fh)
    plan = sequencer.plan_from_dict(plan_data, scenario.partition, scenario.targets)
    return scenario, plan


def _optimizer_config(scenario: Scenario, args) -> bilevel.OptimizerConfig:
    cfg = dict(scenario.optimizer)
    kwargs = {
        "variant": args.variant,
        "alpha0": args.alpha0 if args.alpha0 is not None else cfg.get("alpha0"),
        "eps_ss": cfg.get("eps_ss", 1e-4),
        "eps_tau": cfg.get("eps_tau", 1e-3),
        "max_settle": cfg.get("max_settle", 200),
        "tau_margin": cfg.get("tau_margin", 1.0),
        "n_intervals": cfg.get("n_intervals", 40),
    }
    if args.max_cycles is not None:
        kwargs["max_cycles"] = args.max_cycles
    elif "max_cycles" in cfg:
        kwargs["max_cycles"] = cfg["max_cycles"]
    return bilevel.OptimizerConfig(**kwargs)


def cmd_optimize(args) -> int:
    t0 = time.perf_counter()
    outdir = Path(args.rundir)
    scenario, plan = _load_run_dir(outdir)
    config = _optimizer_config(scenario, args)
    tag = f"v{config.variant}"
    files = []
    # history is persisted as cycles complete so interrupted runs keep a trace
    with bilevel.HistoryWriter(outdir / f"history_{tag}.csv", plan.K) as hist:
        result = bilevel.optimize(
            plan, scenario.partition, scenario.targets, scenario.omegas0, config,
            history_sink=hist.append,
        )
    files.append(f"history_{tag}.csv")
    write_trace_csv(outdir / f"trace_{tag}.csv", result.final_state.trace)
    files.append(f"trace_{tag}.csv")
    write_covariance_csv(
        outdir / f"covariances_{tag}.csv",
        result.final_state.trace.times,
        result.final_state.trace.tr,
    )
    files.append(f"covariances_{tag}.csv")
    summary = {
        "variant": config.variant,
        "J": result.final_state.J,
        "T": result.final_state.T,
        "tau": result.final_state.tau.tolist(),
        "converged": result.converged,
        "cycles": result.cycles_used,
        "updates": result.updates,
        "alpha0": result.alpha0,
        "omega_start": [o.tolist() for o in result.final_state.omega_start.omegas],
        "min_durations": [m.min_duration for m in plan.monitors],
    }
    _json_dump(summary, outdir / f"summary_{tag}.json")
    files.append(f"summary_{tag}.json")
    _update_manifest(
        outdir, f"optimize_{tag}", files, time.perf_counter() - t0,
        args.seed if args.seed is not None else scenario.seed,
        {"variant": config.variant, "max_cycles": config.max_cycles,
         "alpha0": config.alpha0, "eps_tau": config.eps_tau, "eps_ss": config.eps_ss},
    )
    print(
        f"optimize v{config.variant}: J={result.final_state.J:.6f} cycles={result.cycles_used} "
        f"updates={result.updates} converged={result.converged}"
    )
    return 0


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    outdir = Path(args.rundir)
    scenario, plan = _load_run_dir(outdir)
    summary_path = outdir / f"summary_v{args.variant}.json"
    if summary_path.exists():
        with open(summary_path) as fh:
            summary = json.load(fh)
        tau = np.array(summary["tau"])
        omegas = CovState([np.array(o) for o in summary["omega_start"]])
    else:
        margin = float(scenario.optimizer.get("tau_margin", 1.0))
        tau = np.array([m.min_duration + margin for m in plan.monitors])
        omegas = scenario.omegas0
    states = bilevel.simulate_cycles(
        plan, scenario.partition, scenario.targets, tau, omegas, args.cycles,
        n_intervals=int(scenario.optimizer.get("n_intervals", 40)),
    )
    files = []
    for c, state in enumerate(states):
        name = f"sim_trace_cycle{c}.csv"
        write_trace_csv(outdir / name, state.trace)
        files.append(name)
    _json_dump(
        {
            "cycles": args.cycles,
            "J": [s.J for s in states],
            "T": states[0].T if states else None,
            "tau": tau.tolist(),
        },
        outdir / "sim_summary.json",
    )
    files.append("sim_summary.json")
    _update_manifest(
        outdir, "simulate", files, time.perf_counter() - t0, scenario.seed,
        {"cycles": args.cycles},
    )
    print(f"simulate: {args.cycles} cycles, J={[round(s.J, 6) for s in states]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hyperm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("plan", help="grow planner trees, sequence targets, assemble the cycle")
    sp.add_argument("scenario")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--rrbt-iters", type=int, default=None,
                    help="tree growth iterations (default: 300 per region)")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(fn=cmd_plan)

    so = sub.add_parser("optimize", help="run the monitoring-duration optimization")
    so.add_argument("rundir")
    so.add_argument("--variant", type=int, choices=(1, 2), default=1)
    so.add_argument("--max-cycles", type=int, default=None)
    so.add_argument("--alpha0", type=float, default=None)
    so.add_argument("--seed", type=int, default=None)
    so.set_defaults(fn=cmd_optimize)

    ss = sub.add_parser("simulate", help="replay cycles at fixed durations")
    ss.add_argument("rundir")
    ss.add_argument("--cycles", type=int, default=2)
    ss.add_argument("--variant", type=int, choices=(1, 2), default=1,
                    help="which optimized result to replay when available")
    ss.set_defaults(fn=cmd_simulate)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ScenarioError as exc:
        print(f"error: invalid_scenario: {exc}", file=sys.stderr)
        return 1
    except UnreachableError as exc:
        print(f"error: unreachable_pair: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        seg = getattr(exc, "segment", None)
        print(f"error: solver_failure: segment={seg}: {exc}", file=sys.stderr)
        return 3
    except HypermError as exc:
        print(f"error: failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
