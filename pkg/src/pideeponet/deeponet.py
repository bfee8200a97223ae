"""Unstacked DeepONet: branch net over sensor values, trunk net over (tau, x)."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DomainError, ShapeError
from .gp import SourceFunction
from .nnet import Activation, MlpConfig, MlpParams, mlp_forward, mlp_hidden, mlp_init


@dataclass(frozen=True)
class Domain:
    T: float = 1.0
    L: float = 1.0

    def __post_init__(self):
        if not (self.T > 0 and self.L > 0):
            raise ConfigurationError("domain needs T > 0 and L > 0")

    def contains(self, tau, x) -> np.ndarray:
        tau, x = np.asarray(tau), np.asarray(x)
        return (tau >= 0) & (tau <= self.T) & (x >= -self.L) & (x <= self.L)

    def check(self, tau, x) -> None:
        if not np.all(self.contains(tau, x)):
            raise DomainError(f"query point outside [0, {self.T}] x [-{self.L}, {self.L}]")


class QueryPoint(NamedTuple):
    tau: float
    x: float


@dataclass(frozen=True)
class DeepOnetModel:
    branch: MlpParams
    trunk: MlpParams
    domain: Domain = Domain()
    output_scale: float = 1.0
    output_bias: float = 0.0
    rescale_inputs: bool = False

    def __post_init__(self):
        if self.branch.out_dim != self.trunk.out_dim:
            raise ShapeError(
                f"branch output {self.branch.out_dim} and trunk output {self.trunk.out_dim} differ"
            )
        if self.trunk.in_dim != 2:
            raise ShapeError("trunk net takes (tau, x) pairs")
        if not self.output_scale > 0:
            raise ConfigurationError("output scale c must be positive")

    @property
    def embedding_dim(self) -> int:
        return self.branch.out_dim

    @property
    def m(self) -> int:
        return self.branch.in_dim

    def with_params(self, branch: MlpParams, trunk: MlpParams, output_bias: float) -> "DeepOnetModel":
        return replace(self, branch=branch, trunk=trunk, output_bias=float(output_bias))


def init_model(
    m: int,
    domain: Domain = Domain(),
    q: int = 64,
    hidden: tuple[int, ...] = (64, 64),
    activation: Activation | str = Activation.RELU,
    seed: int = 0,
    output_scale: float = 1.0,
    trunk_hidden: tuple[int, ...] | None = None,
) -> DeepOnetModel:
    """Freshly initialised model; branch and trunk get distinct init seeds."""
    trunk_hidden = hidden if trunk_hidden is None else trunk_hidden
    branch = mlp_init(MlpConfig((m, *hidden, q), activation, (2 * seed) % 2**64))
    trunk = mlp_init(MlpConfig((2, *trunk_hidden, q), activation, (2 * seed + 1) % 2**64))
    rescale = not (domain.T == 1.0 and domain.L == 1.0)
    return DeepOnetModel(branch, trunk, domain, output_scale, 0.0, rescale)


def _sensor_values(model: DeepOnetModel, g) -> np.ndarray:
    values = g.sensor_values if isinstance(g, SourceFunction) else np.asarray(g, dtype=np.float64)
    if values.shape[-1] != model.m:
        raise ShapeError(f"branch expects {model.m} sensor values, got {values.shape[-1]}")
    return values


def trunk_inputs(domain: Domain, rescale: bool, points):
    """Raw (tau, x) on the unit domain, else mapped affinely onto [-1, 1]^2."""
    if not rescale:
        return points
    scale = np.array([2.0 / domain.T, 1.0 / domain.L])
    shift = np.array([-1.0, 0.0])
    return ad.add(ad.mul(points, scale), shift)


def branch_embed(branch: MlpParams, output_scale: float, sensor_values):
    return ad.mul(mlp_forward(branch, sensor_values), output_scale)


def trunk_embed(trunk: MlpParams, domain: Domain, rescale: bool, points):
    return mlp_forward(trunk, trunk_inputs(domain, rescale, points))


def branch_forward(model: DeepOnetModel, g) -> np.ndarray:
    return branch_embed(model.branch, model.output_scale, _sensor_values(model, g))


def trunk_forward(model: DeepOnetModel, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    model.domain.check(y[..., 0], y[..., 1])
    return trunk_embed(model.trunk, model.domain, model.rescale_inputs, y)


def operator_eval(model: DeepOnetModel, g, y) -> float:
    """G_theta(g)(y) for a single query point ``y = (tau, x)``."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (2,):
        raise ShapeError(f"expected a single (tau, x) point, got shape {y.shape}")
    return float(operator_eval_points(model, g, y[None, :])[0])


def operator_eval_points(model: DeepOnetModel, g, points, embedding=None) -> np.ndarray:
    """G_theta(g) at an array of points (..., 2); one branch pass."""
    points = np.asarray(points, dtype=np.float64)
    emb = branch_forward(model, g) if embedding is None else embedding
    flat = points.reshape(-1, 2)
    model.domain.check(flat[:, 0], flat[:, 1])
    # row by row so every point goes through the same BLAS path as a single query
    vals = np.array([np.dot(trunk_forward(model, p[None, :])[0], emb) for p in flat]) + model.output_bias
    return vals.reshape(points.shape[:-1])


def operator_eval_grid(model: DeepOnetModel, g, taus, xs) -> np.ndarray:
    """Field on the tensor grid ``taus x xs`` (rows are time levels)."""
    taus = np.asarray(taus, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    model.domain.check(taus, np.zeros_like(taus))
    model.domain.check(np.zeros_like(xs), xs)
    tt, xx = np.meshgrid(taus, xs, indexing="ij")
    return operator_eval_points(model, g, np.stack([tt, xx], axis=-1))


def operator_eval_batch(branch, trunk, bias, domain: Domain, rescale: bool, output_scale: float, sensor_values, points):
    """Traceable batched evaluation.

    ``sensor_values`` is (n, m); ``points`` is (n, p, 2), one point set per
    source function.  Returns (n, p).
    """
    emb = branch_embed(branch, output_scale, sensor_values)
    # fold the trunk's affine output layer into the embedding:
    # emb . (W h + b) = (W^T emb) . h + emb . b
    hidden = mlp_hidden(trunk, trunk_inputs(domain, rescale, points))
    coeffs = ad.matmul(emb, trunk.weights[-1])
    offset = ad.matmul(emb, ad.reshape(trunk.biases[-1], (-1, 1)))
    return ad.add(ad.add(ad.rowdot(coeffs, hidden), offset), bias)
