"""Evaluation protocol: held-out prediction error, zero-shot task returns, workspace coverage."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from ..ensemble import TransitionDataset
from ..envs import (REACH_TOLERANCE, EnvSpec, env_reset, env_step, task_reward_fn, tip_position)
from ..errors import ConfigError, DomainError, ShapeError, SoftAEError, UsageError
from ..planning import ICemConfig, MpcController, PlannerSpec, Propagation, mpc_step


def generate_heldout(env: EnvSpec, n_targets: int = 100, steps_per_target: int = 40,
                     seed: int = 0, return_info: bool = False):
    """Reaching rollouts toward random reachable targets, each cut short once the tip
    is within 5 mm of its target.

    Targets are the tip positions of joint configurations drawn uniformly from
    the statically reachable box ``|q_i| <= 0.9 * torque_limit / stiffness``.
    Each rollout starts at rest and follows a spring-compensated PD law toward
    the target configuration.  With ``return_info`` the per-rollout truncation
    flags are returned as well.
    """
    if not env.is_arm:
        raise UsageError("held-out reaching protocol is defined for the elastic arm")
    rng = np.random.default_rng(seed)
    k = env.joint_stiffness
    q_max = 0.9 * env.torque_limit / k
    kp, kd = k, 2.0 * env.joint_damping
    data = TransitionDataset(env.d_s, env.d_a)
    truncated = []
    for _ in range(n_targets):
        q_star = rng.uniform(-q_max, q_max, env.n_links)
        target = tip_position(env, q_star)
        s = env_reset(env)
        S, A, S2 = [], [], []
        hit = False
        for _ in range(steps_per_target):
            tau = k * q_star + kp * (q_star - s.angles) - kd * s.velocities
            nxt, info = env_step(env, s, tau)
            S.append(s.to_vector())
            A.append(info["action"])
            S2.append(nxt.to_vector())
            s = nxt
            if np.linalg.norm(s.tip - target) <= REACH_TOLERANCE:
                hit = True
                break
        truncated.append(hit)
        data = data.extend(S, A, S2)
    return (data, truncated) if return_info else data


class ModelError(NamedTuple):
    mse: float
    per_dim: np.ndarray      # NaN for excluded dims
    excluded_dims: int


def _normalized_errors(pred, heldout: TransitionDataset):
    std = heldout.next_states.std(axis=0)
    keep = std > 1e-12
    err = (pred - heldout.next_states)[..., keep] / std[keep]
    return err, keep


def evaluate_model_mse(model, heldout: TransitionDataset) -> ModelError:
    """MSE of the ensemble mean with each next-state dim scaled by its held-out std.

    Dimensions whose held-out std is zero are left out and counted.
    """
    if len(heldout) == 0:
        raise DomainError("held-out set is empty")
    if (heldout.d_s, heldout.d_a) != (model.d_s, model.d_a):
        raise ShapeError("held-out dims do not match the model")
    mean, _ = model.predict_batch(heldout.states, heldout.actions)
    err, keep = _normalized_errors(mean, heldout)
    per_dim = np.full(model.d_s, np.nan)
    per_dim[keep] = np.mean(err**2, axis=0)
    return ModelError(float(np.mean(err**2)), per_dim, int((~keep).sum()))


def evaluate_particle_mse(model, heldout: TransitionDataset) -> np.ndarray:
    """Normalized MSE of every ensemble particle on its own."""
    preds = model.particle_predictions(heldout.states, heldout.actions)
    err, _ = _normalized_errors(preds, heldout)
    return np.mean(err**2, axis=(-2, -1))


@dataclass
class TaskReturns:
    task_id: str
    returns: list
    errors: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        ok = [r for r in self.returns if np.isfinite(r)]
        return float(np.mean(ok)) if ok else float("nan")

    @property
    def std(self) -> float:
        """Population std (0 for a single episode)."""
        ok = [r for r in self.returns if np.isfinite(r)]
        return float(np.std(ok)) if ok else float("nan")


def run_task_episode(model, env: EnvSpec, task, planner: PlannerSpec, icem: ICemConfig, seed: int,
                     horizon: Optional[int] = None):
    """One MPC episode on the true system with the task reward; returns the summed reward
    and the visited states."""
    reward = task_reward_fn(task, env)
    spec = PlannerSpec(planner.propagation, reward, planner.horizon, planner.beta, planner.noise_seed)
    controller = MpcController(seed=seed)
    s = env_reset(env).to_vector()
    total = 0.0
    visited = []
    for _ in range(horizon or task.horizon):
        a, _ = mpc_step(controller, model, spec, icem, s)
        nxt, info = env_step(env, s, a)
        s = nxt.to_vector()
        total += float(reward(s, info["action"]))
        visited.append(s)
    return total, np.array(visited)


def evaluate_zero_shot(model, tasks, planner: PlannerSpec, icem: ICemConfig, env: EnvSpec,
                       n_episodes: int = 1, seed: int = 0) -> dict:
    """Per-task returns of MPC with the task reward and mean propagation.

    Episode ``i`` of every task uses controller seed ``(seed, i)``.  Planner
    failures are recorded per episode (return NaN) and do not stop other tasks.
    """
    mean_planner = PlannerSpec(Propagation.MEAN, planner.reward, planner.horizon, planner.beta,
                               planner.noise_seed)
    out = {}
    for task in tasks:
        task.check_env(env)
        res = TaskReturns(task.task_id, [])
        for ep in range(n_episodes):
            ep_seed = int(np.random.SeedSequence([seed, ep]).generate_state(1)[0])
            try:
                ret, _ = run_task_episode(model, env, task, mean_planner, icem, ep_seed)
            except SoftAEError as exc:
                ret = float("nan")
                res.errors.append(f"episode {ep}: {exc}")
            res.returns.append(ret)
        out[task.task_id] = res
    return out


@dataclass
class HeatmapGrid:
    x_bounds: tuple
    z_bounds: tuple
    bins: int
    counts: np.ndarray   # (bins, bins), indexed [x_bin, z_bin]
    dropped: int = 0     # samples outside the bounds

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def tip_positions(dataset: TransitionDataset, tip_slice=None) -> np.ndarray:
    """Tip (x, z) of every next state; the tip is stored in the last two state entries
    unless ``tip_slice`` says otherwise."""
    sl = tip_slice if tip_slice is not None else slice(dataset.d_s - 2, dataset.d_s)
    return dataset.next_states[:, sl]


def coverage_heatmap(points_or_dataset, bounds, bins: int = 20) -> HeatmapGrid:
    """Count tip positions per square bin; ``bounds = ((x_lo, x_hi), (z_lo, z_hi))``.

    Points on the upper edge fall in the last bin; points outside are dropped
    and counted.
    """
    if bins < 1:
        raise ConfigError("bins must be >= 1")
    pts = (tip_positions(points_or_dataset) if isinstance(points_or_dataset, TransitionDataset)
           else np.asarray(points_or_dataset, dtype=np.float64).reshape(-1, 2))
    (x0, x1), (z0, z1) = bounds
    if not (x0 < x1 and z0 < z1):
        raise ConfigError("heatmap bounds must satisfy lo < hi")
    inside = ((pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= z0) & (pts[:, 1] <= z1))
    p = pts[inside]
    ix = np.minimum(((p[:, 0] - x0) / (x1 - x0) * bins).astype(int), bins - 1)
    iz = np.minimum(((p[:, 1] - z0) / (z1 - z0) * bins).astype(int), bins - 1)
    counts = np.zeros((bins, bins), dtype=np.int64)
    np.add.at(counts, (ix, iz), 1)
    return HeatmapGrid((float(x0), float(x1)), (float(z0), float(z1)), bins, counts,
                       int((~inside).sum()))


def coverage_entropy(grid: HeatmapGrid) -> float:
    """Shannon entropy (nats) of the normalized bin counts, with 0 log 0 = 0."""
    c = grid.counts.ravel()
    c = c[c > 0].astype(np.float64)
    if c.size == 0:
        return 0.0
    p = c / c.sum()
    return float(-(p * np.log(p)).sum())


def arm_workspace_bounds(env: EnvSpec):
    r = env.max_reach
    return ((-r, r), (-r, r))
