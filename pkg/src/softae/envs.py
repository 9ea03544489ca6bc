"""Desk-scale surrogate systems, their task rewards and the uniform random policy.

ElasticArm
    Planar chain of ``n_links`` rigid links joined by torsional springs and
    dampers, with a point mass at the end of every link.  Observation vector:
    ``[angles (n), angular velocities (n), tip x, tip z]``.  The inertia
    matrix is that of the straight rest configuration, which keeps the joint
    dynamics linear while the tip position is a nonlinear function of the
    angles.  Each control step runs ``substeps`` of linearly implicit Euler
    (stiffness and damping taken at the end of the substep), which dissipates
    energy for any step size.

DelayedCart
    1-D point mass with linear drag whose force command takes effect
    ``action_delay_steps`` control steps after it is issued.  Observation
    vector: ``[position, velocity, pending forces (oldest first)]``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainError, UsageError

REACH_TOLERANCE = 5e-3  # m; reward saturates at 1 inside this radius


class EnvKind(str, enum.Enum):
    ELASTIC_ARM = "elastic_arm"
    DELAYED_CART = "delayed_cart"


@dataclass(frozen=True)
class EnvSpec:
    kind: EnvKind = EnvKind.ELASTIC_ARM
    dt: float = 0.05
    substeps: int = 4
    # elastic arm
    n_links: int = 6
    link_length: float = 0.2
    link_mass: float = 0.1
    joint_stiffness: float = 20.0
    joint_damping: float = 1.0
    torque_limit: float = 8.0
    # delayed cart
    mass: float = 1.0
    drag: float = 1.0
    action_delay_steps: int = 2
    force_limit: float = 1.0
    reset_noise: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", EnvKind(self.kind))
        if self.dt <= 0 or self.substeps < 1:
            raise ConfigError("dt must be positive and substeps >= 1")
        if self.kind is EnvKind.ELASTIC_ARM:
            vals = (self.n_links, self.link_length, self.link_mass, self.joint_stiffness,
                    self.joint_damping, self.torque_limit)
        else:
            vals = (self.mass, self.drag, self.force_limit)
            if self.action_delay_steps < 0:
                raise ConfigError("action delay must be >= 0")
        if any(v <= 0 for v in vals):
            raise ConfigError("physical constants must be positive")
        if self.reset_noise < 0:
            raise ConfigError("reset_noise must be >= 0")

    @staticmethod
    def elastic_arm(**kw) -> "EnvSpec":
        return EnvSpec(kind=EnvKind.ELASTIC_ARM, **kw)

    @staticmethod
    def delayed_cart(**kw) -> "EnvSpec":
        return EnvSpec(kind=EnvKind.DELAYED_CART, **kw)

    @property
    def is_arm(self) -> bool:
        return self.kind is EnvKind.ELASTIC_ARM

    @property
    def d_s(self) -> int:
        return 2 * self.n_links + 2 if self.is_arm else 2 + self.action_delay_steps

    @property
    def d_a(self) -> int:
        return self.n_links if self.is_arm else 1

    @property
    def max_reach(self) -> float:
        return self.n_links * self.link_length

    @property
    def action_bounds(self) -> np.ndarray:
        lim = self.torque_limit if self.is_arm else self.force_limit
        return np.tile([-lim, lim], (self.d_a, 1)).astype(np.float64)

    @property
    def tip_slice(self) -> slice:
        return slice(2 * self.n_links, 2 * self.n_links + 2)


@dataclass(frozen=True)
class ArmState:
    angles: np.ndarray
    velocities: np.ndarray
    tip: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.angles, self.velocities, self.tip])


@dataclass(frozen=True)
class CartState:
    position: float
    velocity: float
    queue: np.ndarray  # pending forces, oldest first

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.position, self.velocity], self.queue])


def state_from_vector(spec: EnvSpec, vec) -> ArmState | CartState:
    v = np.asarray(vec, dtype=np.float64)
    if v.shape != (spec.d_s,):
        raise DomainError(f"state vector must have {spec.d_s} entries")
    if spec.is_arm:
        n = spec.n_links
        return ArmState(v[:n].copy(), v[n:2 * n].copy(), v[2 * n:].copy())
    return CartState(float(v[0]), float(v[1]), v[2:].copy())


def tip_position(spec: EnvSpec, angles) -> np.ndarray:
    """Forward kinematics of the planar chain; works on (..., n_links) arrays."""
    phi = np.cumsum(np.asarray(angles, dtype=np.float64), axis=-1)
    return spec.link_length * np.stack([np.cos(phi).sum(-1), np.sin(phi).sum(-1)], axis=-1)


def tip_jacobian(spec: EnvSpec, angles) -> np.ndarray:
    """d tip / d angles, shape (2, n_links)."""
    phi = np.cumsum(np.asarray(angles, dtype=np.float64))
    l = spec.link_length
    # joint j moves every link i >= j
    sx = -l * np.sin(phi)[::-1].cumsum()[::-1]
    sz = l * np.cos(phi)[::-1].cumsum()[::-1]
    return np.stack([sx, sz])


def arm_mass_matrix(spec: EnvSpec) -> np.ndarray:
    """Joint-space inertia of the straight chain with a point mass at each link end."""
    n, l, m = spec.n_links, spec.link_length, spec.link_mass
    idx = np.arange(n)
    # lever arm of joint i about mass k is (k + 1 - i) * l for k >= i
    lever = np.clip(idx[None, :] + 1 - idx[:, None], 0, None) * l  # (joint, mass)
    return m * lever @ lever.T


def arm_energy(spec: EnvSpec, state) -> float:
    """Kinetic plus elastic energy in joules."""
    s = state if isinstance(state, ArmState) else state_from_vector(spec, state)
    M = arm_mass_matrix(spec)
    return float(0.5 * s.velocities @ M @ s.velocities
                 + 0.5 * spec.joint_stiffness * s.angles @ s.angles)


_ARM_CACHE: dict = {}


def _arm_operators(spec: EnvSpec):
    key = (spec.n_links, spec.link_length, spec.link_mass, spec.joint_stiffness,
           spec.joint_damping, spec.dt, spec.substeps)
    if key not in _ARM_CACHE:
        h = spec.dt / spec.substeps
        M = arm_mass_matrix(spec)
        n = spec.n_links
        S = M + h * spec.joint_damping * np.eye(n) + h * h * spec.joint_stiffness * np.eye(n)
        _ARM_CACHE[key] = (M, np.linalg.inv(S), h)
    return _ARM_CACHE[key]


def env_reset(spec: EnvSpec, seed: Optional[int] = None):
    """Rest state. With ``spec.reset_noise > 0`` the angles/position get a seeded perturbation."""
    rng = np.random.default_rng(seed)
    if spec.is_arm:
        q = np.zeros(spec.n_links)
        if spec.reset_noise:
            q = rng.normal(0.0, spec.reset_noise, spec.n_links)
        return ArmState(q, np.zeros(spec.n_links), tip_position(spec, q))
    x = float(rng.normal(0.0, spec.reset_noise)) if spec.reset_noise else 0.0
    return CartState(x, 0.0, np.zeros(spec.action_delay_steps))


def clip_action(spec: EnvSpec, action):
    a = np.asarray(action, dtype=np.float64).reshape(spec.d_a)
    b = spec.action_bounds
    clipped = np.clip(a, b[:, 0], b[:, 1])
    return clipped, bool((clipped != a).any())


def env_step(spec: EnvSpec, state, action):
    """Advance one control period. Returns ``(next_state, info)``.

    ``info`` holds the applied (clipped) action, a ``clipped`` flag and the tip
    position (arm) or position (cart).
    """
    if isinstance(state, np.ndarray):
        state = state_from_vector(spec, state)
    if not np.isfinite(state.to_vector()).all():
        raise DomainError("non-finite state")
    a, was_clipped = clip_action(spec, action)
    if spec.is_arm:
        M, S_inv, h = _arm_operators(spec)
        q, v = state.angles.copy(), state.velocities.copy()
        k = spec.joint_stiffness
        for _ in range(spec.substeps):
            v = S_inv @ (M @ v + h * (a - k * q))
            q = q + h * v
        tip = tip_position(spec, q)
        return ArmState(q, v, tip), {"action": a, "clipped": was_clipped, "tip": tip}
    queue = np.concatenate([state.queue, a])
    force, queue = queue[0], queue[1:]
    x, v = state.position, state.velocity
    h = spec.dt / spec.substeps
    for _ in range(spec.substeps):
        v = (v + h * force / spec.mass) / (1.0 + h * spec.drag / spec.mass)
        x = x + h * v
    return CartState(x, v, queue), {"action": a, "clipped": was_clipped, "tip": np.array([x, 0.0])}


def step_vector(spec: EnvSpec, s, a) -> np.ndarray:
    return env_step(spec, np.asarray(s, dtype=np.float64), a)[0].to_vector()


def cart_transition_matrices(spec: EnvSpec):
    """Exact linear map s' = A s + B a of the cart observation vector."""
    if spec.is_arm:
        raise UsageError("linear transition matrices are defined for the cart only")
    d = spec.d_s
    A = np.column_stack([step_vector(spec, e, [0.0]) for e in np.eye(d)])
    B = step_vector(spec, np.zeros(d), [1.0])[:, None]
    return A, B


class TaskKind(str, enum.Enum):
    REACH = "reach"
    VELOCITY = "velocity"


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    kind: TaskKind
    target: Optional[tuple] = None   # reach: (x, z) in metres
    sign: int = 1                    # velocity: +1 or -1
    horizon: int = 200
    kappa: float = 20.0              # reach: tail steepness, 1/m

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind(self.kind))
        if self.kind is TaskKind.REACH:
            if self.target is None or len(self.target) != 2:
                raise ConfigError("reach task needs a 2-D target")
            object.__setattr__(self, "target", tuple(float(t) for t in self.target))
        elif self.sign not in (1, -1):
            raise ConfigError("velocity task sign must be +1 or -1")
        if self.horizon < 1 or self.kappa <= 0:
            raise ConfigError("horizon must be >= 1 and kappa > 0")

    def check_env(self, spec: EnvSpec):
        want = EnvKind.ELASTIC_ARM if self.kind is TaskKind.REACH else EnvKind.DELAYED_CART
        if spec.kind is not want:
            raise UsageError(f"task {self.task_id!r} ({self.kind.value}) does not apply to {spec.kind.value}")
        if self.kind is TaskKind.REACH and np.hypot(*self.target) > spec.max_reach:
            raise ConfigError(f"target of {self.task_id!r} lies outside the workspace")


def shaped_reach(distance, kappa: float = 20.0, tol: float = REACH_TOLERANCE):
    """Long-tail shaping: 1 within ``tol``, then 1 / (1 + kappa * (d - tol))."""
    d = np.asarray(distance, dtype=np.float64)
    return np.where(d <= tol, 1.0, 1.0 / (1.0 + kappa * np.maximum(d - tol, 0.0)))


def task_reward_fn(task: TaskSpec, spec: EnvSpec):
    """Vectorized ``reward(next_states, actions)`` for planning and evaluation."""
    task.check_env(spec)
    if task.kind is TaskKind.REACH:
        target = np.array(task.target)
        tip = spec.tip_slice

        def reward(states, actions=None):
            d = np.linalg.norm(np.asarray(states)[..., tip] - target, axis=-1)
            return shaped_reach(d, task.kappa)
    else:
        sign = float(task.sign)

        def reward(states, actions=None):
            return sign * np.asarray(states)[..., 1]
    reward.task_id = task.task_id
    return reward


def task_reward(task: TaskSpec, spec: EnvSpec, state, action=None) -> float:
    if not isinstance(state, np.ndarray):
        state = state.to_vector()
    return float(task_reward_fn(task, spec)(state, action))


def uniform_bend_target(spec: EnvSpec, distance_fraction: float) -> tuple:
    """Tip position of a uniformly bent chain whose tip lies ``distance_fraction * max_reach``
    away from the rest tip (bent toward +z)."""
    rest = np.array([spec.max_reach, 0.0])
    want = distance_fraction * spec.max_reach
    lo, hi = 0.0, np.pi / spec.n_links
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        d = np.linalg.norm(tip_position(spec, np.full(spec.n_links, mid)) - rest)
        lo, hi = (mid, hi) if d < want else (lo, mid)
    tip = tip_position(spec, np.full(spec.n_links, 0.5 * (lo + hi)))
    return float(tip[0]), float(tip[1])


def arm_reach_tasks(spec: EnvSpec, horizon: int = 200, kappa: float = 20.0) -> list[TaskSpec]:
    """The two arm tasks: ``reach_close`` (a quarter of the reach away from rest)
    and ``reach_far`` (90 % of the reach away)."""
    return [
        TaskSpec("reach_close", TaskKind.REACH, uniform_bend_target(spec, 0.25), horizon=horizon, kappa=kappa),
        TaskSpec("reach_far", TaskKind.REACH, uniform_bend_target(spec, 0.9), horizon=horizon, kappa=kappa),
    ]


def cart_tasks(horizon: int = 200) -> list[TaskSpec]:
    return [TaskSpec("move_pos_x", TaskKind.VELOCITY, sign=1, horizon=horizon),
            TaskSpec("move_neg_x", TaskKind.VELOCITY, sign=-1, horizon=horizon)]


def random_action(action_bounds, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw inside the per-dimension bounds."""
    b = np.asarray(action_bounds, dtype=np.float64).reshape(-1, 2)
    return rng.uniform(b[:, 0], b[:, 1])


def with_overrides(spec: EnvSpec, **kw) -> EnvSpec:
    return replace(spec, **kw)
