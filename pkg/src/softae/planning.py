"""Trajectory optimization against a learned model: rewards, propagation, iCEM, MPC.

Any object with ``d_s``, ``d_a`` and ``predict_batch(states, actions) ->
(mean, std)`` can serve as the model; :class:`EnsembleModel` is the usual
one and :class:`DeterministicModel` wraps a known transition function.

Three propagation schemes are supported:

``MEAN``
    s' = mu(s, a)
``TRAJECTORY_SAMPLING``
    s' = mu(s, a) + sigma(s, a) * z with z ~ N(0, I), averaged over several
    independent rollouts per candidate
``OPTIMISTIC``
    s' = mu(s, a) + beta * sigma(s, a) * eta, where eta in [-1, 1]^d_s is a
    hallucinated control optimized jointly with the actions

Process noise is not simulated inside planning rollouts.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from .errors import ConfigError, OptimizerError, ShapeError, UsageError


class Propagation(str, enum.Enum):
    MEAN = "mean"
    TRAJECTORY_SAMPLING = "trajectory_sampling"
    OPTIMISTIC = "optimistic"


EPISTEMIC = "epistemic"

# reward(next_states, actions) -> values, vectorized over leading axes
RewardFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class PlannerSpec:
    propagation: Propagation = Propagation.OPTIMISTIC
    reward: Union[str, RewardFn] = EPISTEMIC
    horizon: int = 10
    beta: float = 2.0
    noise_seed: int = 0

    def __post_init__(self):
        self.propagation = Propagation(self.propagation)
        if self.horizon < 1:
            raise ConfigError("planning horizon must be >= 1")
        if self.beta < 0:
            raise ConfigError("beta must be non-negative")
        if isinstance(self.reward, str) and self.reward != EPISTEMIC:
            raise ConfigError(f"unknown reward source {self.reward!r}")

    @property
    def epistemic(self) -> bool:
        return isinstance(self.reward, str)


@dataclass
class ICemConfig:
    samples: int = 200
    elites: int = 20
    colored_noise_exponent: float = 0.25
    iterations: int = 5
    particles_per_candidate: int = 10
    elite_reuse_fraction: float = 0.3
    action_bounds: np.ndarray = None  # (d_a, 2) rows of [lo, hi]
    init_std_fraction: float = 0.25   # initial std as a fraction of each dim's range
    min_std_fraction: float = 0.01    # std floor, capped at the initial std

    def __post_init__(self):
        if self.action_bounds is not None:
            self.action_bounds = np.asarray(self.action_bounds, dtype=np.float64).reshape(-1, 2)
        self.validate()

    def validate(self):
        if not 1 <= self.elites <= self.samples:
            raise ConfigError("need 1 <= elites <= samples")
        if self.iterations < 1 or self.particles_per_candidate < 1:
            raise ConfigError("iterations and particles_per_candidate must be >= 1")
        if not 0.0 <= self.elite_reuse_fraction <= 1.0:
            raise ConfigError("elite_reuse_fraction must lie in [0, 1]")
        if self.init_std_fraction < 0 or self.min_std_fraction < 0:
            raise ConfigError("std fractions must be non-negative")
        b = self.action_bounds
        if b is not None and (not np.isfinite(b).all() or (b[:, 0] >= b[:, 1]).any()):
            raise ConfigError("action bounds must be finite with lo < hi")

    @property
    def reused_elites(self) -> int:
        return math.ceil(self.elite_reuse_fraction * self.elites)


@dataclass
class AugmentedActionSeq:
    """An ``(H, d_a)`` action plan plus, for optimistic planning, ``(H, d_s)`` hallucinated controls."""

    actions: np.ndarray
    hallucinated: Optional[np.ndarray] = None

    def clipped(self, bounds) -> "AugmentedActionSeq":
        b = np.asarray(bounds, dtype=np.float64)
        eta = None if self.hallucinated is None else np.clip(self.hallucinated, -1.0, 1.0)
        return AugmentedActionSeq(np.clip(self.actions, b[:, 0], b[:, 1]), eta)


@dataclass
class DeterministicModel:
    """A known transition function presented through the model interface (sigma = 0)."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d_s: int
    d_a: int

    def predict_batch(self, states, actions):
        mean = np.asarray(self.fn(np.asarray(states, float), np.asarray(actions, float)), float)
        return mean, np.zeros_like(mean)


def exploration_reward(sigma) -> np.ndarray:
    """Euclidean norm of the epistemic std over the last axis."""
    return np.linalg.norm(np.asarray(sigma, dtype=np.float64), axis=-1)


def _step(model, scheme, states, actions, beta, eta=None, z=None):
    mean, sigma = model.predict_batch(states, actions)
    if scheme is Propagation.MEAN:
        nxt = mean
    elif scheme is Propagation.TRAJECTORY_SAMPLING:
        nxt = mean + sigma * z
    else:
        nxt = mean + beta * (sigma * eta)
    return nxt, sigma


def propagate(model, scheme, s, a, eta=None, rng=None, beta: float = 1.0) -> np.ndarray:
    """One planning step from ``s`` under ``a`` with the given propagation scheme."""
    scheme = Propagation(scheme)
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if scheme is Propagation.OPTIMISTIC:
        if eta is None or rng is not None:
            raise UsageError("optimistic propagation takes eta and no random source")
        eta = np.asarray(eta, dtype=np.float64)
        if eta.shape[-1:] != (model.d_s,):
            raise ShapeError(f"eta must have {model.d_s} entries")
        if (np.abs(eta) > 1.0).any():
            raise UsageError("eta entries must lie in [-1, 1]")
        return _step(model, scheme, s, a, beta, eta=eta)[0]
    if eta is not None:
        raise UsageError(f"{scheme.value} propagation does not take eta")
    if scheme is Propagation.MEAN:
        if rng is not None:
            raise UsageError("mean propagation does not take a random source")
        return _step(model, scheme, s, a, beta)[0]
    if rng is None:
        raise UsageError("trajectory sampling needs an explicit random source")
    z = rng.standard_normal(s.shape)
    return _step(model, scheme, s, a, beta, z=z)[0]


def _single_rollout(model, spec: PlannerSpec, s0, actions, eta, rng):
    """Values of P candidates along one simulated trajectory each; shape (P,)."""
    P, H, _ = actions.shape
    states = np.broadcast_to(s0, (P, model.d_s)).copy()
    total = np.zeros(P)
    valid = np.ones(P, dtype=bool)
    scheme = spec.propagation
    with np.errstate(all="ignore"):
        for h in range(H):
            a = actions[:, h]
            z = rng.standard_normal((P, model.d_s)) if scheme is Propagation.TRAJECTORY_SAMPLING else None
            e = eta[:, h] if eta is not None else None
            nxt, sigma = _step(model, scheme, states, a, spec.beta, eta=e, z=z)
            if spec.epistemic:
                r = exploration_reward(sigma)
            else:
                r = np.asarray(spec.reward(nxt, a), dtype=np.float64)
            total = total + r
            ok = np.isfinite(nxt).all(axis=-1) & np.isfinite(r)
            valid &= ok
            states = np.where(ok[:, None], nxt, 0.0)
    total[~valid] = -np.inf
    return total


def rollout_values(model, spec: PlannerSpec, s0, actions, eta=None, rng=None,
                   particles_per_candidate: int = 1) -> np.ndarray:
    """Batched objective: ``actions`` is (P, H, d_a), ``eta`` (P, H, d_s) or None.

    Non-finite intermediate states give a value of ``-inf``.  For trajectory
    sampling the value is the average over ``particles_per_candidate``
    independent sampled rollouts.
    """
    actions = np.asarray(actions, dtype=np.float64)
    if actions.ndim != 3 or actions.shape[1] != spec.horizon or actions.shape[2] != model.d_a:
        raise ShapeError(f"candidates must be (P, {spec.horizon}, {model.d_a}), got {actions.shape}")
    s0 = np.asarray(s0, dtype=np.float64)
    if spec.propagation is Propagation.OPTIMISTIC:
        if eta is None:
            raise UsageError("optimistic planning needs hallucinated controls")
        eta = np.asarray(eta, dtype=np.float64)
        if eta.shape != actions.shape[:2] + (model.d_s,):
            raise ShapeError(f"hallucinated controls must be {actions.shape[:2] + (model.d_s,)}")
    elif eta is not None:
        raise UsageError(f"{spec.propagation.value} planning takes no hallucinated controls")
    if spec.propagation is not Propagation.TRAJECTORY_SAMPLING:
        return _single_rollout(model, spec, s0, actions, eta, None)
    if rng is None:
        raise UsageError("trajectory sampling needs an explicit random source")
    runs = [_single_rollout(model, spec, s0, actions, None, rng)
            for _ in range(particles_per_candidate)]
    # mean taken relative to the first run: identical runs average to exactly that run
    ref = runs[0]
    with np.errstate(invalid="ignore"):
        shift = np.mean([r - ref for r in runs], axis=0)
        out = ref + shift
    out[~np.isfinite(out)] = -np.inf
    return out


def rollout_value(model, spec: PlannerSpec, s0, candidate: AugmentedActionSeq, rng=None,
                  particles_per_candidate: int = 1) -> float:
    eta = None if candidate.hallucinated is None else np.asarray(candidate.hallucinated)[None]
    return float(rollout_values(model, spec, s0, np.asarray(candidate.actions)[None], eta, rng,
                                particles_per_candidate)[0])


def _spectrum(exponent: float, horizon: int):
    f = np.maximum(np.fft.rfftfreq(horizon), 1.0 / horizon)
    scale = f ** (-exponent / 2.0)
    # expected per-sample variance of the irfft output, DC and Nyquist bins counted once
    power = 4.0 * scale**2
    power[0] = 2.0 * scale[0] ** 2
    if horizon % 2 == 0:
        power[-1] = 2.0 * scale[-1] ** 2
    return scale, np.sqrt(power.sum()) / horizon


def _shaped(re, im, horizon: int, sigma: float):
    if horizon % 2 == 0:
        im[..., -1] = 0.0
        re[..., -1] *= np.sqrt(2.0)
    im[..., 0] = 0.0
    re[..., 0] *= np.sqrt(2.0)
    return np.fft.irfft(re + 1j * im, n=horizon, axis=-1) / sigma


def colored_noise(rng: np.random.Generator, exponent: float, n: int, horizon: int) -> np.ndarray:
    """``n`` unit-variance sequences of length ``horizon`` with power spectrum ~ f^-exponent.

    White Gaussian noise is shaped in the frequency domain; frequencies below
    1/horizon are clamped to 1/horizon.  The scaling makes every entry's
    variance exactly one in expectation.
    """
    if horizon == 1 or exponent == 0:
        return rng.standard_normal((n, horizon))
    scale, sigma = _spectrum(exponent, horizon)
    re = rng.standard_normal((n, len(scale))) * scale
    im = rng.standard_normal((n, len(scale))) * scale
    return _shaped(re, im, horizon, sigma)


def colored_noise_streams(streams, exponent: float, n: int, horizon: int) -> np.ndarray:
    """``colored_noise`` for each generator in ``streams``, stacked on a last axis.

    Same draws and values as calling :func:`colored_noise` per stream, with a
    single batched inverse FFT.
    """
    if horizon == 1 or exponent == 0:
        return np.stack([r.standard_normal((n, horizon)) for r in streams], axis=-1)
    scale, sigma = _spectrum(exponent, horizon)
    F = len(scale)
    re = np.empty((len(streams), n, F))
    im = np.empty((len(streams), n, F))
    for k, r in enumerate(streams):
        re[k] = r.standard_normal((n, F))
        im[k] = r.standard_normal((n, F))
    re *= scale
    im *= scale
    return np.moveaxis(_shaped(re, im, horizon, sigma), 0, -1)


class ICemResult(NamedTuple):
    best_candidate: np.ndarray
    best_value: float
    final_mean: np.ndarray
    elites: np.ndarray
    best_history: list


def icem_optimize(objective, horizon: int, dim: int, config: ICemConfig, warm_start=None,
                  rng: np.random.Generator = None, bounds=None, initial_elites=None) -> ICemResult:
    """Maximize ``objective`` over (horizon, dim) sequences with the improved cross-entropy method.

    ``objective`` maps a (N, horizon, dim) batch to N values.  ``bounds`` is
    (dim, 2) and defaults to ``config.action_bounds``.  Each dimension draws
    its noise from its own child stream of ``rng``, so the samples of the
    first k dims do not depend on how many further dims are optimized.
    Ties are broken toward the lowest pool index; fresh samples come before
    reused elites in the pool.
    """
    bounds = config.action_bounds if bounds is None else np.asarray(bounds, dtype=np.float64)
    if bounds is None or bounds.shape != (dim, 2):
        raise ConfigError(f"bounds must have shape ({dim}, 2)")
    lo, hi = bounds[:, 0], bounds[:, 1]
    span = hi - lo
    if warm_start is None:
        mean = np.broadcast_to((lo + hi) / 2.0, (horizon, dim)).copy()
    else:
        mean = np.clip(np.asarray(warm_start, dtype=np.float64).reshape(horizon, dim), lo, hi)
    std0 = config.init_std_fraction * span
    floor = np.minimum(config.min_std_fraction * span, std0)
    std = np.broadcast_to(std0, (horizon, dim)).copy()
    if rng is None:
        rng = np.random.default_rng()
    base = np.random.SeedSequence(int(rng.integers(2**63)))
    streams = [np.random.default_rng(c) for c in base.spawn(dim)]

    carried = (np.zeros((0, horizon, dim)) if initial_elites is None
               else np.clip(np.asarray(initial_elites, dtype=np.float64), lo, hi)
               .reshape(-1, horizon, dim)[:config.reused_elites])
    best, best_value = None, -np.inf
    history = []
    elites = carried
    for _ in range(config.iterations):
        noise = colored_noise_streams(streams, config.colored_noise_exponent, config.samples, horizon)
        fresh = np.clip(mean + std * noise, lo, hi)
        pool = np.concatenate([fresh, carried]) if len(carried) else fresh
        values = np.asarray(objective(pool), dtype=np.float64).reshape(len(pool))
        values = np.where(np.isnan(values), -np.inf, values)
        order = np.argsort(-values, kind="stable")
        n_ok = int((values > -np.inf).sum())
        if n_ok:
            top = order[:min(config.elites, n_ok)]
            elites = pool[top]
            if values[top[0]] > best_value:
                best_value = float(values[top[0]])
                best = pool[top[0]].copy()
            # deviations from the top elite: identical elites refit to exactly themselves
            dev = elites - elites[0]
            mean = elites[0] + dev.mean(axis=0)
            std = np.maximum(dev.std(axis=0), floor)
            carried = elites[:config.reused_elites]
        history.append(best_value)
    if best is None:
        raise OptimizerError("every candidate evaluated to -inf or NaN")
    return ICemResult(best, best_value, mean, elites, history)


@dataclass
class MpcController:
    """Receding-horizon state: warm-start plan, reusable elites and a step counter."""

    seed: int = 0
    plan: Optional[np.ndarray] = None
    elites: Optional[np.ndarray] = None
    steps: int = 0

    def reset(self):
        self.plan, self.elites, self.steps = None, None, 0


def _shift(seq):
    # drop the executed step, repeat the last one
    return np.concatenate([seq[..., 1:, :], seq[..., -1:, :]], axis=-2)


def mpc_step(controller: MpcController, model, spec: PlannerSpec, config: ICemConfig, state):
    """Plan from ``state`` and return ``(first_action, diagnostics)``.

    For optimistic specs the hallucinated controls are optimized alongside
    the actions but only the real action is returned.
    """
    s = np.asarray(state, dtype=np.float64)
    d_a, d_s = model.d_a, model.d_s
    if config.action_bounds is None or config.action_bounds.shape != (d_a, 2):
        raise ConfigError(f"icem config needs action bounds of shape ({d_a}, 2)")
    optimistic = spec.propagation is Propagation.OPTIMISTIC
    bounds = config.action_bounds
    if optimistic:
        bounds = np.concatenate([bounds, np.tile([-1.0, 1.0], (d_s, 1))])
    dim = len(bounds)
    icem_rng = np.random.default_rng([controller.seed, controller.steps])
    noise_rng = np.random.default_rng([spec.noise_seed, controller.seed, controller.steps, 1])

    def objective(pool):
        acts = pool[..., :d_a]
        eta = pool[..., d_a:] if optimistic else None
        return rollout_values(model, spec, s, acts, eta, noise_rng, config.particles_per_candidate)

    warm = controller.plan if controller.plan is not None and controller.plan.shape == (spec.horizon, dim) else None
    init_el = controller.elites if warm is not None else None
    result = icem_optimize(objective, spec.horizon, dim, config, warm_start=warm,
                           rng=icem_rng, bounds=bounds, initial_elites=init_el)
    best = result.best_candidate
    controller.plan = _shift(best)
    controller.elites = _shift(result.elites[:config.reused_elites]) if config.reused_elites else None
    controller.steps += 1

    plan_sigma = _plan_sigma(model, spec, s, best, d_a)
    action = np.clip(best[0, :d_a], config.action_bounds[:, 0], config.action_bounds[:, 1])
    return action, {"best_value": result.best_value, "plan_sigma": plan_sigma,
                    "best_history": result.best_history, "plan": best}


def _plan_sigma(model, spec, s, plan, d_a):
    """||sigma|| along the chosen plan; sampled propagation is replaced by the mean."""
    states = s[None]
    norms = []
    with np.errstate(all="ignore"):
        for h in range(len(plan)):
            a = plan[h:h + 1, :d_a]
            mean, sigma = model.predict_batch(states, a)
            norms.append(float(exploration_reward(sigma)[0]))
            if spec.propagation is Propagation.OPTIMISTIC:
                states = mean + spec.beta * sigma * plan[h:h + 1, d_a:]
            else:
                states = mean
    return norms
