"""Dense feedforward networks, exact parameter gradients and ADAM."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, ContractError, PoisonedGradientError, ShapeError


class Activation(str, enum.Enum):
    RELU = "relu"
    TANH = "tanh"

    def __call__(self, z):
        return ad.relu(z) if self is Activation.RELU else ad.tanh(z)


@dataclass(frozen=True)
class MlpConfig:
    layer_sizes: tuple[int, ...]
    activation: Activation = Activation.RELU
    init_seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ConfigurationError(f"invalid layer_sizes {self.layer_sizes!r}")
        if not 0 <= int(self.init_seed) < 2**64:
            raise ConfigurationError("init_seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activation", Activation(self.activation))


@dataclass(frozen=True)
class MlpParams:
    """Per-layer weights ``W`` (out x in) and biases ``b`` (out,).

    Entries are float64 ndarrays, or :class:`~pideeponet.autodiff.Tensor`
    leaves while a gradient is being traced.
    """

    weights: tuple
    biases: tuple
    activation: Activation = Activation.RELU

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("weights and biases must be non-empty and of equal length")
        prev = None
        for w, b in zip(self.weights, self.biases):
            ws, bs = ad.value(w).shape, ad.value(b).shape
            if len(ws) != 2 or bs != (ws[0],):
                raise ShapeError(f"layer shapes do not match: W {ws}, b {bs}")
            if prev is not None and ws[1] != prev:
                raise ShapeError(f"layer input {ws[1]} does not chain with previous output {prev}")
            prev = ws[0]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        sizes = [ad.value(self.weights[0]).shape[1]]
        sizes += [ad.value(w).shape[0] for w in self.weights]
        return tuple(sizes)

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def arrays(self) -> list[np.ndarray]:
        """Flat list ``[W1, b1, W2, b2, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, arrays: Sequence, activation: Activation) -> "MlpParams":
        return cls(tuple(arrays[0::2]), tuple(arrays[1::2]), Activation(activation))

    def map(self, fn: Callable) -> "MlpParams":
        return MlpParams.from_arrays([fn(a) for a in self.arrays()], self.activation)

    def zip_map(self, other: "MlpParams", fn: Callable) -> "MlpParams":
        return MlpParams.from_arrays(
            [fn(a, b) for a, b in zip(self.arrays(), other.arrays())], self.activation
        )


def mlp_init(config: MlpConfig) -> MlpParams:
    """He (relu) or Glorot (tanh) normal weights, zero biases."""
    rng = np.random.Generator(np.random.Philox(key=config.init_seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(config.layer_sizes[:-1], config.layer_sizes[1:]):
        if config.activation is Activation.RELU:
            std = np.sqrt(2.0 / fan_in)
        else:
            std = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(std * rng.standard_normal((fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(weights), tuple(biases), config.activation)


def mlp_forward(params: MlpParams, inputs):
    """Evaluate the network on one input vector or a batch (leading axes).

    Hidden layers apply the activation; the last layer is affine only.
    """
    x = inputs
    if not isinstance(x, ad.Tensor):
        x = np.asarray(x, dtype=np.float64)
    if ad.value(x).shape[-1:] != (params.in_dim,):
        raise ShapeError(f"expected input dimension {params.in_dim}, got shape {ad.value(x).shape}")
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = ad.linear(x, w, b)
        if i < n_layers - 1:
            x = params.activation(x)
    return x


def mlp_hidden(params: MlpParams, inputs):
    """Features entering the last (affine) layer."""
    x = inputs
    if not isinstance(x, ad.Tensor):
        x = np.asarray(x, dtype=np.float64)
    if ad.value(x).shape[-1:] != (params.in_dim,):
        raise ShapeError(f"expected input dimension {params.in_dim}, got shape {ad.value(x).shape}")
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        x = params.activation(ad.linear(x, w, b))
    return x


def _leaves(obj):
    if isinstance(obj, MlpParams):
        return obj.map(ad.Tensor)
    return ad.Tensor(obj)


def _grads(traced, original):
    if isinstance(original, MlpParams):
        return MlpParams.from_arrays(
            [np.zeros_like(a) if t.grad is None else np.array(t.grad) for t, a in zip(traced.arrays(), original.arrays())],
            original.activation,
        )
    return np.zeros_like(np.asarray(original, dtype=np.float64)) if traced.grad is None else np.array(traced.grad)


def grad_params(loss_fn: Callable, *params):
    """Value and reverse-mode gradient of a scalar ``loss_fn(*params)``.

    Each argument is an :class:`MlpParams` or a plain array/float; the
    returned gradients mirror that structure.  ``loss_fn`` must build its
    result from :func:`mlp_forward` and the ops in :mod:`autodiff`.
    """
    traced = [_leaves(p) for p in params]
    root = loss_fn(*traced)
    if not isinstance(root, ad.Tensor):
        # the loss does not depend on any parameter
        value = np.asarray(root, dtype=np.float64)
        if value.size != 1:
            raise ContractError(f"loss must be a scalar, got shape {value.shape}")
        return float(value), tuple(_grads(_leaves(p), p) for p in params)
    root.backward()
    return float(root.value), tuple(_grads(t, p) for t, p in zip(traced, params))


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0 or not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1 or not self.epsilon > 0:
            raise ConfigurationError("invalid ADAM hyperparameters")

    @classmethod
    def zeros_like(cls, arrays: Sequence[np.ndarray], **kwargs) -> "AdamState":
        return cls(
            [np.zeros_like(np.asarray(a, dtype=np.float64)) for a in arrays],
            [np.zeros_like(np.asarray(a, dtype=np.float64)) for a in arrays],
            **kwargs,
        )


def _flat(x) -> list:
    if isinstance(x, MlpParams):
        return x.arrays()
    if isinstance(x, (list, tuple)):
        out = []
        for item in x:
            out += _flat(item)
        return out
    return [x]


def _unflat(template, flat: list):
    it = iter(flat)

    def build(t):
        if isinstance(t, MlpParams):
            return MlpParams.from_arrays([next(it) for _ in t.arrays()], t.activation)
        if isinstance(t, (list, tuple)):
            return type(t)(build(i) for i in t)
        v = next(it)
        return float(v) if np.ndim(t) == 0 and not isinstance(t, np.ndarray) else v

    return build(template)


def adam_state_for(params, **kwargs) -> AdamState:
    return AdamState.zeros_like(_flat(params), **kwargs)


def adam_step(params, grads, state: AdamState, iteration: int | None = None):
    """One bias-corrected ADAM update.

    ``params`` and ``grads`` are an :class:`MlpParams`, an array, or any
    nesting of lists/tuples of those.  Returns ``(new_params, new_state)``;
    the inputs are left untouched.
    """
    p_flat = [np.asarray(a, dtype=np.float64) for a in _flat(params)]
    g_flat = [np.asarray(a, dtype=np.float64) for a in _flat(grads)]
    if len(p_flat) != len(g_flat) or len(p_flat) != len(state.first_moment):
        raise ShapeError("params, grads and optimizer state do not match")
    for p, g in zip(p_flat, g_flat):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            at = state.step_count if iteration is None else iteration
            raise PoisonedGradientError(f"non-finite gradient at iteration {at}", iteration=at)
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_flat, g_flat, state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_p.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
        new_m.append(m)
        new_v.append(v)
    new_state = replace(state, first_moment=new_m, second_moment=new_v, step_count=t)
    return _unflat(params, new_p), new_state
