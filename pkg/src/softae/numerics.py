"""Dense MLPs with hand-written reverse-mode gradients, Adam, and symlog.

Parameters may carry a leading *stack* axis so that an ensemble of
identically-shaped networks is evaluated and trained in one vectorized pass:
an unstacked layer weight has shape ``(out, in)``, a stacked one
``(L, out, in)``.  Every routine here treats the stack as L independent
networks; nothing couples the particles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError, ShapeError

ACTIVATIONS = ("tanh", "linear")


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[:-2] != b.shape[:-1] or w.shape[-2] != b.shape[-1]:
                raise ShapeError(f"layer {i}: weight {w.shape} vs bias {b.shape}")
            if i and w.shape[-1] != self.weights[i - 1].shape[-2]:
                raise ShapeError(f"layer {i} input {w.shape[-1]} != layer {i - 1} output "
                                 f"{self.weights[i - 1].shape[-2]}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[-1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[-2]

    @property
    def stack_size(self) -> int | None:
        """Number of stacked networks, or None for a single network."""
        return self.weights[0].shape[0] if self.weights[0].ndim == 3 else None

    @property
    def layer_sizes(self) -> list[int]:
        return [self.in_dim] + [w.shape[-2] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def with_arrays(self, arrays: list[np.ndarray]) -> "MlpParams":
        n = len(self.weights)
        return MlpParams(list(arrays[:n]), list(arrays[n:]), self.activation)

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    @staticmethod
    def stack(params: list["MlpParams"]) -> "MlpParams":
        first = params[0]
        if any(p.layer_sizes != first.layer_sizes or p.activation != first.activation
               for p in params):
            raise ShapeError("cannot stack networks with different architectures")
        n = len(first.weights)
        return MlpParams(
            [np.stack([p.weights[i] for p in params]) for i in range(n)],
            [np.stack([p.biases[i] for p in params]) for i in range(n)],
            first.activation,
        )

    def unstack(self) -> list["MlpParams"]:
        if self.stack_size is None:
            return [self]
        return [self.select(i) for i in range(self.stack_size)]

    def select(self, index: int) -> "MlpParams":
        return MlpParams([w[index] for w in self.weights], [b[index] for b in self.biases],
                         self.activation)


def init_mlp(layer_sizes, rng: np.random.Generator, activation="tanh") -> MlpParams:
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), for weights and biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights, biases, activation)


def _act(z, activation):
    return np.tanh(z) if activation == "tanh" else z


def _linear(params: MlpParams, i: int, h: np.ndarray) -> np.ndarray:
    w, b = params.weights[i], params.biases[i]
    if w.ndim == 3:
        return np.matmul(h, np.swapaxes(w, -1, -2)) + b[:, None, :]
    return h @ w.T + b


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] != params.in_dim:
        raise ShapeError(f"input last dim {x.shape[-1:] or ()} != network input {params.in_dim}")
    return x


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Evaluate the network; hidden layers use the activation, the output head is linear.

    ``x`` may be a vector, a ``(B, in)`` batch, or, for stacked params, an
    ``(L, B, in)`` batch with one slice per network.  A vector or 2-D batch
    is broadcast over the stack.
    """
    x = _check_input(params, x)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    last = len(params.weights) - 1
    for i in range(last + 1):
        h = _linear(params, i, h)
        if i < last:
            h = _act(h, params.activation)
    return h[..., 0, :] if squeeze else h


def mse_loss_and_grad(params: MlpParams, inputs, targets):
    """Mean squared error over batch and output dims, with its exact gradient.

    Returns ``(loss, grads)`` where ``grads`` is an :class:`MlpParams` holding
    the derivatives.  For stacked params the loss is a length-L vector and each
    network's gradient is that of its own loss.
    """
    x = _check_input(params, inputs)
    t = np.asarray(targets, dtype=np.float64)
    if x.ndim == 1:
        x, t = x[None, :], t[None, :]
    if x.shape[-2] == 0:
        raise DomainError("empty batch")
    if t.shape[-1] != params.out_dim or t.shape[-2] != x.shape[-2]:
        raise ShapeError(f"targets {t.shape} do not match outputs for inputs {x.shape}")

    stacked = params.stack_size is not None
    if stacked and x.ndim == 2:
        x = np.broadcast_to(x, (params.stack_size, *x.shape))
    n_layers = len(params.weights)
    hs = [x]
    for i in range(n_layers):
        z = _linear(params, i, hs[-1])
        hs.append(_act(z, params.activation) if i < n_layers - 1 else z)
    err = hs[-1] - t
    batch, out = err.shape[-2], err.shape[-1]
    loss = np.mean(err**2, axis=(-2, -1))

    delta = 2.0 * err / (batch * out)
    gw, gb = [None] * n_layers, [None] * n_layers
    for i in reversed(range(n_layers)):
        h_in = hs[i]
        gw[i] = np.matmul(np.swapaxes(delta, -1, -2), h_in)
        gb[i] = delta.sum(axis=-2)
        if i:
            delta = np.matmul(delta, params.weights[i])
            if params.activation == "tanh":
                delta = delta * (1.0 - hs[i] ** 2)
    grads = MlpParams(gw, gb, params.activation)
    return (loss if stacked else float(loss)), grads


@dataclass
class OptimizerState:
    """Adam moments and step counter; ``first_moment``/``second_moment`` mirror the params."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    learning_rate: float
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def fresh(params: MlpParams, learning_rate: float, **kw) -> "OptimizerState":
        if not learning_rate >= 0:
            raise ValueError("learning rate must be non-negative")
        arrays = params.arrays()
        return OptimizerState([np.zeros_like(a) for a in arrays],
                              [np.zeros_like(a) for a in arrays], learning_rate, **kw)


def adam_update(p, g, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam rule on one array; returns ``(p, m, v)`` as new arrays."""
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return p - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


def adam_update_inplace(p, g, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8, work=None):
    """Same arithmetic as :func:`adam_update`, writing into ``p``, ``m`` and ``v``.

    ``work`` is an optional pair of scratch arrays shaped like ``p``.
    """
    a, b = work if work is not None else (np.empty_like(p), np.empty_like(p))
    m *= beta1
    np.multiply(g, 1.0 - beta1, out=a)
    m += a
    v *= beta2
    np.multiply(g, g, out=a)
    a *= 1.0 - beta2
    v += a
    np.divide(v, 1.0 - beta2**t, out=a)
    np.sqrt(a, out=a)
    a += eps
    np.divide(m, 1.0 - beta1**t, out=b)
    b *= lr
    b /= a
    p -= b


def _check_finite(arrays, n_weights):
    for k, g in enumerate(arrays):
        if not np.isfinite(g).all():
            bad = np.argwhere(~np.isfinite(g))[0]
            kind, layer = ("weight", k) if k < n_weights else ("bias", k - n_weights)
            raise NumericError(f"non-finite gradient in {kind} of layer {layer} "
                               f"at index {tuple(int(i) for i in bad)}")


def optimizer_step(params: MlpParams, grads: MlpParams, state: OptimizerState):
    """One bias-corrected Adam step on the loss (descent).

    Returns new ``(params, state)``; the inputs are not modified.
    """
    g_arrays = grads.arrays()
    p_arrays = params.arrays()
    if [g.shape for g in g_arrays] != [p.shape for p in p_arrays]:
        raise ShapeError("gradient shapes do not match parameter shapes")
    _check_finite(g_arrays, len(params.weights))
    t = state.step_count + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.first_moment, state.second_moment):
        p, m, v = adam_update(p, g, m, v, t, state.learning_rate, state.beta1, state.beta2, state.eps)
        new_p.append(p)
        new_m.append(m)
        new_v.append(v)
    new_state = OptimizerState(new_m, new_v, state.learning_rate, t, state.beta1, state.beta2,
                               state.eps)
    return params.with_arrays(new_p), new_state


def symlog(x):
    """sign(x) * log(1 + |x|), elementwise."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.log1p(np.abs(x))


def symexp(y):
    """Inverse of :func:`symlog`: sign(y) * (exp(|y|) - 1)."""
    y = np.asarray(y, dtype=np.float64)
    return np.sign(y) * np.expm1(np.abs(y))
