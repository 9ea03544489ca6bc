"""The episodic exploration loop shared by every method."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..ensemble import EnsembleModel, TransitionDataset, fit, init_ensemble
from ..envs import env_reset, env_step, random_action, task_reward_fn
from ..errors import ExperimentError
from ..planning import EPISTEMIC, MpcController, exploration_reward, mpc_step
from .config import ExperimentConfig, Method
from .evaluation import evaluate_zero_shot


@dataclass
class EpisodeRow:
    episode: int
    exploration_return: float
    train_loss: float
    wall_ms: float


@dataclass
class ExperimentRecord:
    method: str
    seed: int
    rows: list = field(default_factory=list)
    normalized_mse: Optional[float] = None
    task_returns: dict = field(default_factory=dict)
    coverage_entropy: Optional[float] = None
    failed_episode: Optional[int] = None
    failed_phase: Optional[str] = None
    # (episode, task_id, mean return) from the in-loop zero-shot evaluations
    task_curve: list = field(default_factory=list)


def _seed(seed: int, *path) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), *path])


def _int_seed(seed: int, *path) -> int:
    return int(_seed(seed, *path).generate_state(1, np.uint64)[0] >> np.uint64(1))


def init_model(config: ExperimentConfig, seed: int) -> EnsembleModel:
    m = config.model
    return init_ensemble(config.env.d_s, config.env.d_a, m.hidden, m.ensemble_size, m.beta,
                         m.aleatoric_std, seed=_int_seed(seed, 0), activation=m.activation)


def make_policy(config: ExperimentConfig, model, seed: int, episode: int):
    """Return ``policy(state_vector) -> action`` for one episode."""
    method = config.run.method
    env = config.env
    if method is Method.RANDOM:
        rng = np.random.default_rng(_seed(seed, episode, 2))
        return lambda s: random_action(env.action_bounds, rng)
    reward = EPISTEMIC
    if method is Method.HUCRL:
        reward = task_reward_fn(config.task(config.run.train_task), env)
    spec = config.planner_spec(reward)
    controller = MpcController(seed=_int_seed(seed, episode, 1))
    return lambda s: mpc_step(controller, model, spec, config.icem, s)[0]


def rollout(env, policy, horizon: int, reset_seed=None):
    """Run ``policy`` on the true system; returns (states, actions, next_states)."""
    s = env_reset(env, reset_seed).to_vector()
    S, A, S2 = [], [], []
    for _ in range(horizon):
        a = policy(s)
        nxt, info = env_step(env, s, a)
        nxt = nxt.to_vector()
        S.append(s)
        A.append(info["action"])
        S2.append(nxt)
        s = nxt
    return np.array(S), np.array(A), np.array(S2)


def run_experiment(config: ExperimentConfig, seed: int,
                   on_episode: Optional[Callable] = None, record_wall_time: bool = True):
    """Algorithm loop: plan with the current model, roll out, grow the dataset, refit.

    With ``run.eval_every = k > 0`` the model is also evaluated zero-shot on
    every task after episodes k, 2k, ... and the last one; the latest means
    land in ``record.task_returns``.

    Returns ``(dataset, model, record)``.  Everything except the wall-clock
    column is a deterministic function of ``(config, seed)``.  ``on_episode``
    is called as ``on_episode(episode, dataset, model, row)`` after each refit.
    """
    env, run = config.env, config.run
    record = ExperimentRecord(run.method.value, int(seed))
    dataset = TransitionDataset(env.d_s, env.d_a)
    phase, episode = "init", 0
    try:
        model = init_model(config, seed)
        for episode in range(1, run.episodes + 1):
            t0 = time.perf_counter()
            phase = "plan"
            policy = make_policy(config, model, seed, episode)
            phase = "rollout"
            S, A, S2 = rollout(env, policy, run.rollout_horizon)
            _, sigma = model.predict_batch(S, A)
            explored = float(exploration_reward(sigma).sum())
            dataset = dataset.extend(S, A, S2)
            phase = "fit"
            f = config.fit
            model, report = fit(model, dataset, f.epochs, f.batch_size, f.learning_rate,
                                f.max_gradient_steps, seed=_int_seed(seed, episode, 3))
            wall = (time.perf_counter() - t0) * 1e3 if record_wall_time else 0.0
            row = EpisodeRow(episode, explored, report.mean_final_loss, wall)
            record.rows.append(row)
            every = run.eval_every
            if every and (episode % every == 0 or episode == run.episodes):
                phase = "eval"
                res = evaluate_zero_shot(model, config.tasks, config.planner_spec(), config.icem, env,
                                         run.eval_episodes, _int_seed(seed, episode, 4))
                for tid, r in res.items():
                    record.task_curve.append((episode, tid, r.mean))
                    record.task_returns[tid] = r.mean
            if on_episode is not None:
                phase = "callback"
                on_episode(episode, dataset, model, row)
    except Exception as exc:
        record.failed_episode, record.failed_phase = episode, phase
        raise ExperimentError(str(exc), episode, phase, record) from exc
    return dataset, model, record
