"""Experiment configuration: one JSON document with sections
``env, tasks, model, fit, planner, icem, run``.

Defaults are the desk-scale settings: 3x64 networks, lr 1e-3, at most 1000
gradient steps per refit, and a 50-sample, 3-iteration planner.
:func:`paper_preset` switches to the full-size values (4x256 networks,
lr 5e-5, 5000 steps, 200 samples, 20 elites, 5 iterations).
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from ..envs import EnvKind, EnvSpec, TaskSpec, arm_reach_tasks, cart_tasks
from ..errors import ConfigError
from ..planning import EPISTEMIC, ICemConfig, PlannerSpec, Propagation

SEED_ENV_VAR = "SOFTAE_SEED"


class Method(str, enum.Enum):
    SOFTAE = "softae"
    MEAN_AE = "mean_ae"
    PETS_AE = "pets_ae"
    RANDOM = "random"
    HUCRL = "hucrl"

    @property
    def propagation(self) -> Optional[Propagation]:
        return {
            Method.SOFTAE: Propagation.OPTIMISTIC,
            Method.MEAN_AE: Propagation.MEAN,
            Method.PETS_AE: Propagation.TRAJECTORY_SAMPLING,
            Method.HUCRL: Propagation.OPTIMISTIC,
        }.get(self)


@dataclass
class ModelConfig:
    ensemble_size: int = 5
    hidden: list = field(default_factory=lambda: [64, 64, 64])
    beta: float = 2.0
    aleatoric_std: float = 1e-3
    activation: str = "tanh"


@dataclass
class FitConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    max_gradient_steps: int = 1000


@dataclass
class PlannerConfig:
    horizon: int = 10
    noise_seed: int = 0


@dataclass
class RunConfig:
    method: Method = Method.SOFTAE
    train_task: Optional[str] = None  # H-UCRL only
    episodes: int = 30
    rollout_horizon: int = 200
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    heldout_targets: int = 100
    heldout_steps: int = 40
    eval_episodes: int = 1
    eval_every: int = 1  # zero-shot evaluation every k episodes; 0 turns it off

    def __post_init__(self):
        self.method = Method(self.method)


def desk_icem() -> ICemConfig:
    return ICemConfig(samples=40, elites=5, iterations=3, particles_per_candidate=3)


@dataclass
class ExperimentConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    tasks: list = field(default_factory=list)
    model: ModelConfig = field(default_factory=ModelConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    icem: ICemConfig = field(default_factory=desk_icem)
    run: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self):
        if not self.tasks:
            self.tasks = default_tasks(self.env, self.run.rollout_horizon)
        if self.icem.action_bounds is None:
            self.icem = replace(self.icem, action_bounds=self.env.action_bounds)
        self.validate()

    def validate(self):
        if self.run.episodes < 0:
            raise ConfigError("episodes must be >= 0")
        if self.run.rollout_horizon < 1:
            raise ConfigError("rollout horizon must be >= 1")
        if self.run.eval_every < 0 or self.run.eval_episodes < 1:
            raise ConfigError("eval_every must be >= 0 and eval_episodes >= 1")
        if not self.run.seeds:
            raise ConfigError("at least one seed is required")
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate task ids")
        for t in self.tasks:
            t.check_env(self.env)
        if self.run.method is Method.HUCRL and self.run.train_task not in ids:
            raise ConfigError(f"H-UCRL train task {self.run.train_task!r} is not among {ids}")
        if self.icem.action_bounds.shape != (self.env.d_a, 2):
            raise ConfigError("icem action bounds do not match the environment")

    def task(self, task_id: str) -> TaskSpec:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise ConfigError(f"unknown task {task_id!r}")

    def planner_spec(self, reward=EPISTEMIC, propagation=None) -> PlannerSpec:
        prop = propagation or self.run.method.propagation or Propagation.MEAN
        return PlannerSpec(prop, reward, self.planner.horizon, self.model.beta, self.planner.noise_seed)

    def with_method(self, method, train_task=None) -> "ExperimentConfig":
        run = replace(self.run, method=Method(method), train_task=train_task)
        return replace(self, run=run)

    def with_episodes(self, episodes: int) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, episodes=int(episodes)))

    def with_eval_every(self, every: int) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, eval_every=int(every)))


def default_tasks(env: EnvSpec, horizon: int = 200) -> list[TaskSpec]:
    return arm_reach_tasks(env, horizon) if env.kind is EnvKind.ELASTIC_ARM else cart_tasks(horizon)


def paper_preset(config: ExperimentConfig) -> ExperimentConfig:
    """Full-size network, training schedule and planner budget."""
    return replace(config,
                   model=replace(config.model, hidden=[256, 256, 256, 256]),
                   fit=FitConfig(epochs=50, batch_size=64, learning_rate=5e-5, max_gradient_steps=5000),
                   icem=ICemConfig(action_bounds=config.icem.action_bounds))


def resolve_seed(seed: Optional[int], config: ExperimentConfig) -> int:
    """``SOFTAE_SEED`` wins, then an explicit seed, then the first config seed."""
    env = os.environ.get(SEED_ENV_VAR)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR}={env!r} is not an integer") from None
    return int(seed) if seed is not None else int(config.run.seeds[0])


# ---- dict conversion -------------------------------------------------------

def _plain(obj):
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (list, tuple)):
        return [_plain(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _section(obj) -> dict:
    return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}


def config_to_dict(config: ExperimentConfig) -> dict:
    return {
        "env": _section(config.env),
        "tasks": [_section(t) for t in config.tasks],
        "model": _section(config.model),
        "fit": _section(config.fit),
        "planner": _section(config.planner),
        "icem": _section(config.icem),
        "run": _section(config.run),
    }


def _build(cls, data, section, default=None):
    """Instantiate ``cls`` from a JSON object; keys not given keep ``default()``'s values."""
    default = default or cls
    if data is None:
        return default()
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(extra)}")
    try:
        return replace(default(), **data) if default is not cls else cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(data) - {"env", "tasks", "model", "fit", "planner", "icem", "run"}
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    env = _build(EnvSpec, data.get("env"), "env")
    tasks = [_build(TaskSpec, t, "tasks") for t in data.get("tasks") or []]
    return ExperimentConfig(
        env=env, tasks=tasks,
        model=_build(ModelConfig, data.get("model"), "model"),
        fit=_build(FitConfig, data.get("fit"), "fit"),
        planner=_build(PlannerConfig, data.get("planner"), "planner"),
        icem=_build(ICemConfig, data.get("icem"), "icem", desk_icem),
        run=_build(RunConfig, data.get("run"), "run"),
    )
