"""Command-line entry point: ``softae <command> ...``.

Every command is a deterministic function of its inputs and seed, so re-running
it reproduces the same output bytes.  ``SOFTAE_SEED`` overrides any seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..envs import EnvKind, EnvSpec
from ..errors import SoftAEError
from . import io
from .config import ExperimentConfig, Method, resolve_seed
from .evaluation import (arm_workspace_bounds, coverage_entropy, coverage_heatmap,
                         evaluate_model_mse, evaluate_zero_shot, generate_heldout)
from .experiment import run_experiment


def _load_config(path) -> ExperimentConfig:
    return io.load_config(path) if path else ExperimentConfig()


def _env_from_arg(arg) -> EnvSpec:
    """``--env`` is either an env kind name or a config file whose env section is used."""
    if arg in (None, ""):
        return EnvSpec()
    if arg in {k.value for k in EnvKind}:
        return EnvSpec(kind=EnvKind(arg))
    return io.load_config(arg).env


def cmd_explore(args) -> int:
    config = _load_config(args.config)
    if args.method:
        config = config.with_method(args.method, args.train_task or config.run.train_task)
    if args.episodes is not None:
        config = config.with_episodes(args.episodes)
    if args.eval_every is not None:
        config = config.with_eval_every(args.eval_every)
    seed = resolve_seed(args.seed, config)
    out = Path(args.out)
    data, model, record = run_experiment(config, seed, record_wall_time=args.wall_time)
    if config.env.is_arm and len(data):
        grid = coverage_heatmap(data, arm_workspace_bounds(config.env), args.bins)
        record.coverage_entropy = coverage_entropy(grid)
        io.write_csv(out / "heatmap.csv", io.heatmap_to_csv(grid))
    if args.heldout:
        record.normalized_mse = evaluate_model_mse(model, io.load_dataset(args.heldout)).mse
    io.save_config(config, out / "config.json")
    io.save_dataset(data, out / "dataset.jsonl")
    io.save_model(model, out / "model.json")
    io.save_record(record, out)
    if record.task_curve:
        io.write_csv(out / "curve.csv", io.curve_to_csv(record.task_curve))
    print(f"{record.method} seed {seed}: {len(data)} transitions -> {out}")
    return 0


def cmd_heldout(args) -> int:
    env = _env_from_arg(args.env)
    seed = resolve_seed(args.seed, ExperimentConfig(env=env))
    data = generate_heldout(env, args.targets, args.steps, seed)
    io.save_dataset(data, args.out)
    print(f"{len(data)} held-out transitions -> {args.out}")
    return 0


def cmd_eval_model(args) -> int:
    model = io.load_model(args.model)
    res = evaluate_model_mse(model, io.load_dataset(args.heldout))
    doc = {"normalized_mse": res.mse,
           "per_dim": [None if np.isnan(x) else float(x) for x in res.per_dim],
           "excluded_dims": res.excluded_dims}
    io.write_csv(args.out, io.dumps(doc) + "\n")
    print(f"normalized MSE {res.mse:.6g} ({res.excluded_dims} dims excluded)")
    return 0


def cmd_eval_tasks(args) -> int:
    config = _load_config(args.config)
    model = io.load_model(args.model)
    seed = resolve_seed(args.seed, config)
    n = args.episodes if args.episodes is not None else config.run.eval_episodes
    res = evaluate_zero_shot(model, config.tasks, config.planner_spec(), config.icem, config.env,
                             n, seed)
    rows = [(tid, seed, r.mean) for tid, r in res.items()]
    io.write_csv(args.out, io.results_to_csv(rows))
    for tid, r in res.items():
        print(f"{tid}: mean {r.mean:.4f} std {r.std:.4f}" + (f" ({len(r.errors)} failed)"
                                                             if r.errors else ""))
    return 0


def cmd_heatmap(args) -> int:
    data = io.load_dataset(args.dataset)
    if args.bounds:
        x0, x1, z0, z1 = args.bounds
        bounds = ((x0, x1), (z0, z1))
    else:
        bounds = arm_workspace_bounds(EnvSpec())
    grid = coverage_heatmap(data, bounds, args.bins)
    io.write_csv(args.out, io.heatmap_to_csv(grid))
    print(f"entropy {coverage_entropy(grid):.6f} nats, {grid.dropped} samples out of bounds")
    return 0


def _mean_std(values):
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std())


def cmd_report(args) -> int:
    """Mean and population std across runs of every recorded metric, per method."""
    metrics = defaultdict(list)
    for run in args.runs:
        run = Path(run)
        rec = io.load_record(run)
        if rec.normalized_mse is not None:
            metrics[(rec.method, "normalized_mse")].append(rec.normalized_mse)
        if rec.coverage_entropy is not None:
            metrics[(rec.method, "coverage_entropy")].append(rec.coverage_entropy)
        if rec.rows:
            metrics[(rec.method, "final_exploration_return")].append(rec.rows[-1].exploration_return)
        # a post-hoc eval-tasks run supersedes the in-loop evaluation
        results = run / "results.csv"
        if results.exists():
            returns = [(tid, ret) for tid, _, ret in io.results_from_csv(io.read_text(results))]
        else:
            returns = list(rec.task_returns.items())
        for tid, ret in returns:
            metrics[(rec.method, f"return:{tid}")].append(ret)
    rows = []
    for (method, metric), vals in sorted(metrics.items()):
        m, s = _mean_std(vals)
        rows.append((method, metric, len(vals), m, s))
    text = io.csv_text(("method", "metric", "n", "mean", "std"), rows)
    io.write_csv(args.out, text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="softae", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("explore", help="run the exploration loop for one method and seed")
    e.add_argument("--config", help="experiment config JSON (defaults if omitted)")
    e.add_argument("--method", choices=[m.value for m in Method])
    e.add_argument("--train-task", help="task id for the H-UCRL baseline")
    e.add_argument("--seed", type=int)
    e.add_argument("--episodes", type=int, help="override run.episodes")
    e.add_argument("--eval-every", type=int,
                   help="zero-shot evaluation every k episodes (0 = off); overrides run.eval_every")
    e.add_argument("--heldout", help="held-out dataset for the normalized MSE")
    e.add_argument("--bins", type=int, default=20)
    e.add_argument("--wall-time", action="store_true",
                   help="record real wall time (output is then not byte-reproducible)")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_explore)

    h = sub.add_parser("heldout", help="generate the held-out reaching dataset")
    h.add_argument("--env", default="elastic_arm", help="env kind or config JSON")
    h.add_argument("--targets", type=int, default=100)
    h.add_argument("--steps", type=int, default=40, help="max steps per target")
    h.add_argument("--seed", type=int)
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_heldout)

    m = sub.add_parser("eval-model", help="normalized MSE of a model on a held-out set")
    m.add_argument("--model", required=True)
    m.add_argument("--heldout", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_eval_model)

    t = sub.add_parser("eval-tasks", help="zero-shot MPC returns on the config's tasks")
    t.add_argument("--model", required=True)
    t.add_argument("--config")
    t.add_argument("--episodes", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_eval_tasks)

    g = sub.add_parser("heatmap", help="tip-position visitation counts")
    g.add_argument("--dataset", required=True)
    g.add_argument("--bins", type=int, default=20)
    g.add_argument("--bounds", type=float, nargs=4, metavar=("X0", "X1", "Z0", "Z1"))
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_heatmap)

    r = sub.add_parser("report", help="aggregate run directories into a mean/std CSV")
    r.add_argument("runs", nargs="+", help="directories written by explore")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SoftAEError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
