"""Probabilistic ensemble dynamics model.

Each particle is an MLP mapping the normalized input ``[symlog(s), a]`` to
the normalized symlog state increment ``symlog(s') - symlog(s)``.  A raw
next-state prediction undoes that chain per particle; the ensemble mean and
the sample standard deviation (divisor L-1) are then taken across particles
in raw state units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainError, NumericError, ShapeError
from .numerics import (MlpParams, _check_finite, adam_update_inplace, init_mlp, mlp_forward,
                       mse_loss_and_grad, symexp, symlog)

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray


@dataclass
class TransitionDataset:
    """Ordered transitions stored as three aligned arrays.

    ``episode_boundaries`` lists the record indices at which a new episode
    starts (excluding 0), e.g. two 5-step episodes give ``[5]``.
    """

    d_s: int
    d_a: int
    states: np.ndarray = None
    actions: np.ndarray = None
    next_states: np.ndarray = None
    episode_boundaries: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.states is None:
            self.states = np.zeros((0, self.d_s))
            self.actions = np.zeros((0, self.d_a))
            self.next_states = np.zeros((0, self.d_s))
        self.states = np.asarray(self.states, dtype=np.float64).reshape(-1, self.d_s)
        self.actions = np.asarray(self.actions, dtype=np.float64).reshape(-1, self.d_a)
        self.next_states = np.asarray(self.next_states, dtype=np.float64).reshape(-1, self.d_s)
        n = len(self.states)
        if len(self.actions) != n or len(self.next_states) != n:
            raise ShapeError("states, actions and next_states must have equal length")
        b = list(self.episode_boundaries)
        if any(not 0 < x < n for x in b) or any(y <= x for x, y in zip(b, b[1:])):
            raise DomainError(f"episode boundaries {b} invalid for {n} records")
        self.episode_boundaries = [int(x) for x in b]

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i) -> Transition:
        return Transition(self.states[i], self.actions[i], self.next_states[i])

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.states).all() and np.isfinite(self.actions).all()
                    and np.isfinite(self.next_states).all())

    def extend(self, states, actions, next_states) -> "TransitionDataset":
        """Return a new dataset with one more episode appended."""
        states = np.asarray(states, dtype=np.float64).reshape(-1, self.d_s)
        if len(states) == 0:
            return self
        bounds = list(self.episode_boundaries)
        if len(self):
            bounds.append(len(self))
        return TransitionDataset(
            self.d_s, self.d_a,
            np.concatenate([self.states, states]),
            np.concatenate([self.actions, np.asarray(actions, dtype=np.float64).reshape(-1, self.d_a)]),
            np.concatenate([self.next_states,
                            np.asarray(next_states, dtype=np.float64).reshape(-1, self.d_s)]),
            bounds,
        )

    @staticmethod
    def from_transitions(transitions, d_s, d_a, episode_boundaries=()) -> "TransitionDataset":
        transitions = list(transitions)
        if not transitions:
            return TransitionDataset(d_s, d_a, episode_boundaries=list(episode_boundaries))
        return TransitionDataset(
            d_s, d_a,
            np.array([t.state for t in transitions]),
            np.array([t.action for t in transitions]),
            np.array([t.next_state for t in transitions]),
            list(episode_boundaries),
        )


@dataclass
class Normalizer:
    input_mean: np.ndarray
    input_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray

    @staticmethod
    def identity(d_in: int, d_out: int) -> "Normalizer":
        return Normalizer(np.zeros(d_in), np.ones(d_in), np.zeros(d_out), np.ones(d_out))

    @staticmethod
    def fit(inputs, targets) -> "Normalizer":
        return Normalizer(inputs.mean(axis=0), np.maximum(inputs.std(axis=0), STD_FLOOR),
                          targets.mean(axis=0), np.maximum(targets.std(axis=0), STD_FLOOR))


def model_inputs(states, actions) -> np.ndarray:
    """Raw network features ``[symlog(s), a]`` before normalization."""
    return np.concatenate([symlog(states), np.asarray(actions, dtype=np.float64)], axis=-1)


def model_targets(states, next_states) -> np.ndarray:
    return symlog(next_states) - symlog(states)


@dataclass
class EnsembleModel:
    particles: MlpParams  # stacked, leading axis = particle
    normalizer: Normalizer
    d_s: int
    d_a: int
    beta: float = 2.0
    aleatoric_std: float = 1e-3
    _cache: Optional[tuple] = field(default=None, init=False, repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.particles.stack_size

    @property
    def hidden(self) -> list[int]:
        return self.particles.layer_sizes[1:-1]

    def particle_list(self) -> list[MlpParams]:
        return self.particles.unstack()

    def _check(self, s, a):
        s = np.asarray(s, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        if s.shape[-1:] != (self.d_s,) or a.shape[-1:] != (self.d_a,):
            raise ShapeError(f"expected state dim {self.d_s} and action dim {self.d_a}, "
                             f"got {s.shape} and {a.shape}")
        if s.shape[:-1] != a.shape[:-1]:
            raise ShapeError(f"batch shapes differ: {s.shape[:-1]} vs {a.shape[:-1]}")
        return s, a

    def particle_predictions(self, states, actions) -> np.ndarray:
        """Raw next-state prediction of every particle, shape ``(L, *batch, d_s)``.

        No finiteness check: the planner relies on non-finite outputs being
        passed through so that diverging candidates can be discarded.
        """
        s, a = self._check(states, actions)
        batch = s.shape[:-1]
        ls = symlog(s.reshape(-1, self.d_s))
        nz = self.normalizer
        x = np.concatenate([ls, a.reshape(-1, self.d_a)], axis=-1)
        x = (x - nz.input_mean) / nz.input_std
        y = self._forward(x)  # (L, B, d_s)
        out = symexp(ls + (y * nz.target_std + nz.target_mean))
        return out.reshape(self.size, *batch, self.d_s)

    def _forward(self, x):
        # same arithmetic as mlp_forward on the stacked params, with transposed
        # weights cached; every particle runs an identically shaped product
        if self._cache is None:
            p = self.particles
            self._cache = ([np.ascontiguousarray(np.swapaxes(w, -1, -2)) for w in p.weights],
                           [b[:, None, :].copy() for b in p.biases], p.activation == "tanh")
        wts, bs, tanh = self._cache
        h = x
        last = len(wts) - 1
        for i, (w, b) in enumerate(zip(wts, bs)):
            h = np.matmul(h, w)
            h += b
            if i < last and tanh:
                np.tanh(h, out=h)
        return h

    def predict_batch(self, states, actions):
        """Ensemble mean and epistemic std over any leading batch shape."""
        return ensemble_moments(self.particle_predictions(states, actions))


def ensemble_moments(preds: np.ndarray):
    """Mean and sample std (divisor L-1) along axis 0.

    Deviations are taken from the first particle so that identical particles
    give a mean equal to that particle and a std of exactly zero.
    """
    ref = preds[0]
    dev = preds - ref
    dmean = dev.mean(axis=0)
    mean = ref + dmean
    with np.errstate(over="ignore", under="ignore"):
        var = ((dev - dmean) ** 2).sum(axis=0) / (len(preds) - 1)
    sigma = np.sqrt(var)
    # squares that under- or overflow: redo those entries on a rescaled copy
    bad = (var == 0) | np.isinf(var)
    if bad.any():
        bad &= np.isfinite(dev).all(axis=0) & (dev != 0).any(axis=0)
        d = dev[:, bad]
        scale = np.abs(d).max(axis=0)
        scale[scale == 0] = 1.0
        u = d / scale
        sigma[bad] = scale * np.sqrt(((u - u.mean(axis=0)) ** 2).sum(axis=0) / (len(preds) - 1))
    return mean, sigma


def init_ensemble(d_s: int, d_a: int, hidden=(64, 64, 64), size: int = 5, beta: float = 2.0,
                  aleatoric_std: float = 1e-3, seed: int = 0, activation: str = "tanh") -> EnsembleModel:
    if size < 2:
        raise ConfigError("ensemble needs at least 2 particles for a sample variance")
    if d_s < 1 or d_a < 1:
        raise ConfigError("state and action dims must be positive")
    if beta < 0 or aleatoric_std <= 0:
        raise ConfigError("beta must be >= 0 and aleatoric_std > 0")
    sizes = [d_s + d_a, *hidden, d_s]
    children = np.random.SeedSequence(seed).spawn(size)
    particles = [init_mlp(sizes, np.random.default_rng(c), activation) for c in children]
    return EnsembleModel(MlpParams.stack(particles), Normalizer.identity(d_s + d_a, d_s),
                         d_s, d_a, float(beta), float(aleatoric_std))


@dataclass
class TrainReport:
    steps: int
    initial_loss: np.ndarray  # per particle, on the full dataset, normalized units
    final_loss: np.ndarray

    @property
    def mean_final_loss(self) -> float:
        return float(np.mean(self.final_loss))


def _flat_params(params: MlpParams):
    """Copy of ``params`` whose arrays are views into one flat buffer."""
    arrays = params.arrays()
    flat = np.concatenate([a.ravel() for a in arrays])
    views, off = [], 0
    for a in arrays:
        views.append(flat[off:off + a.size].reshape(a.shape))
        off += a.size
    return params.with_arrays(views), flat


def _full_loss(particles, x, y, chunk=4096):
    total = np.zeros(particles.stack_size)
    for i in range(0, len(x), chunk):
        xb, yb = x[i:i + chunk], y[i:i + chunk]
        pred = mlp_forward(particles, xb)
        total += ((pred - yb) ** 2).sum(axis=(-2, -1))
    return total / (len(x) * y.shape[-1])


def fit(model: EnsembleModel, data: TransitionDataset, epochs: int = 50, batch_size: int = 64,
        learning_rate: float = 1e-3, max_gradient_steps: int = 5000, seed: int = 0):
    """Refit the normalizer to ``data`` and train every particle by least squares.

    Training continues from the incoming particle weights with a fresh Adam
    state.  Each particle visits the whole dataset once per epoch in its own
    shuffled order; the run stops early at ``max_gradient_steps``.
    Returns ``(new_model, TrainReport)``.
    """
    if len(data) == 0:
        raise DomainError("cannot fit on an empty dataset")
    if (data.d_s, data.d_a) != (model.d_s, model.d_a):
        raise ShapeError(f"dataset dims ({data.d_s}, {data.d_a}) != model dims "
                         f"({model.d_s}, {model.d_a})")
    if not data.is_finite():
        raise DomainError("dataset contains non-finite entries")
    raw_x = model_inputs(data.states, data.actions)
    raw_y = model_targets(data.states, data.next_states)
    nz = Normalizer.fit(raw_x, raw_y)
    x = (raw_x - nz.input_mean) / nz.input_std
    y = (raw_y - nz.target_mean) / nz.target_std

    L, n = model.size, len(data)
    params, flat = _flat_params(model.particles)
    initial = _full_loss(params, x, y)
    batches_per_epoch = math.ceil(n / batch_size)
    total = min(epochs * batches_per_epoch, max_gradient_steps)
    rngs = [np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(L)]
    m1, m2 = np.zeros_like(flat), np.zeros_like(flat)
    work = (np.empty_like(flat), np.empty_like(flat))
    n_w = len(params.weights)
    step = 0
    perm = None
    while step < total:
        b = step % batches_per_epoch
        if b == 0:
            perm = np.stack([r.permutation(n) for r in rngs])
        idx = perm[:, b * batch_size:(b + 1) * batch_size]
        loss, grads = mse_loss_and_grad(params, x[idx], y[idx])
        bad = np.flatnonzero(~np.isfinite(loss))
        if bad.size:
            raise NumericError(f"non-finite training loss for particle {int(bad[0])} at step {step}")
        g = np.concatenate([a.ravel() for a in grads.arrays()])
        if not np.isfinite(g).all():
            _check_finite(grads.arrays(), n_w)
        step += 1
        # params are views into flat, so the in-place write updates them
        adam_update_inplace(flat, g, m1, m2, step, learning_rate, work=work)
    final = _full_loss(params, x, y) if total else initial
    bad = np.flatnonzero(~np.isfinite(final))
    if bad.size:
        raise NumericError(f"non-finite training loss for particle {int(bad[0])}")
    new = EnsembleModel(params.copy(), nz, model.d_s, model.d_a, model.beta, model.aleatoric_std)
    return new, TrainReport(step, initial, final)


def predict(model: EnsembleModel, s, a):
    """Ensemble mean and epistemic std at a single state-action pair."""
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if not (np.isfinite(s).all() and np.isfinite(a).all()):
        raise DomainError("non-finite state or action")
    if s.shape != (model.d_s,) or a.shape != (model.d_a,):
        raise ShapeError(f"expected shapes ({model.d_s},) and ({model.d_a},)")
    return model.predict_batch(s, a)


def predict_particle(model: EnsembleModel, index: int, s, a) -> np.ndarray:
    if not 0 <= index < model.size:
        raise IndexError(f"particle index {index} out of range for {model.size} particles")
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if not (np.isfinite(s).all() and np.isfinite(a).all()):
        raise DomainError("non-finite state or action")
    return model.particle_predictions(s, a)[index]
