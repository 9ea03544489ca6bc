"""Explore the delayed cart with one method, then drive it left and right zero-shot.

    python3 scripts/cart_zero_shot.py --method softae --episodes 5
"""

import argparse

from softae.envs import EnvSpec
from softae.harness.config import ExperimentConfig, Method, RunConfig
from softae.harness.evaluation import evaluate_zero_shot
from softae.harness.experiment import run_experiment


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--method", default="softae", choices=[m.value for m in Method])
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    train_task = "move_pos_x" if args.method == "hucrl" else None
    cfg = ExperimentConfig(env=EnvSpec.delayed_cart(),
                           run=RunConfig(method=args.method, train_task=train_task,
                                         episodes=args.episodes, rollout_horizon=args.horizon,
                                         eval_every=0))
    data, model, record = run_experiment(cfg, args.seed)
    for row in record.rows:
        print(f"episode {row.episode}: exploration return {row.exploration_return:.3f} "
              f"loss {row.train_loss:.2e}")
    res = evaluate_zero_shot(model, cfg.tasks, cfg.planner_spec(), cfg.icem, cfg.env, 1, args.seed)
    for tid, r in res.items():
        print(f"{tid}: return {r.mean:.3f}")


if __name__ == "__main__":
    main()
