"""PDE residual by central-difference stencils, and the training losses.

The residual of  d_tau phi - d_xx alpha(phi) = g  is formed from five
evaluations of the operator around each collocation point, so the loss is
an ordinary composition of network forward passes and its parameter
gradient needs only first-order backpropagation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .deeponet import DeepOnetModel, Domain, operator_eval_batch, operator_eval_points
from .errors import ConfigurationError, ContractError, MarginError, PoisonedGradientError
from .nnet import grad_params


@dataclass(frozen=True)
class DiffusionFunction:
    """alpha(u): ``quadratic`` u^2, ``identity`` u, or ``power`` |u|^(p-1) u."""

    kind: str = "quadratic"
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in ("quadratic", "identity", "power"):
            raise ConfigurationError(f"unknown diffusion kind {self.kind!r}")
        if self.kind == "power" and not self.p >= 1:
            raise ConfigurationError("power diffusion needs p >= 1")

    @classmethod
    def parse(cls, text: str) -> "DiffusionFunction":
        """``quadratic``, ``identity`` or ``power:<p>``."""
        name, _, arg = text.strip().partition(":")
        if name == "power":
            try:
                return cls("power", float(arg))
            except ValueError:
                raise ConfigurationError(f"bad power exponent in {text!r}") from None
        if arg:
            raise ConfigurationError(f"diffusion kind {name!r} takes no argument")
        return cls(name)

    def __str__(self) -> str:
        return f"power:{self.p:g}" if self.kind == "power" else self.kind

    def __call__(self, u):
        if self.kind == "quadratic":
            return u * u
        if self.kind == "identity":
            return u * 1.0
        return np.abs(u) ** (self.p - 1.0) * u

    def derivative(self, u):
        if self.kind == "quadratic":
            return 2.0 * u
        if self.kind == "identity":
            return np.ones_like(np.asarray(u, dtype=np.float64))
        return self.p * np.abs(u) ** (self.p - 1.0)

    def apply(self, u):
        """Traceable alpha(u)."""
        return ad.elementwise(u, self, self.derivative)


@dataclass(frozen=True)
class StencilConfig:
    h_x: float = 1e-2
    h_tau: float = 1e-2

    def __post_init__(self):
        if not (self.h_x > 0 and self.h_tau > 0):
            raise ConfigurationError("stencil steps must be positive")

    @classmethod
    def for_domain(cls, domain: Domain, rel: float = 1e-2) -> "StencilConfig":
        return cls(h_x=rel * domain.L, h_tau=rel * domain.T)

    @property
    def margin(self) -> float:
        return max(self.h_x, self.h_tau)


@dataclass(frozen=True)
class CollocationSet:
    """Interior residual points (Q, 2) and initial/boundary points (P, 2)."""

    interior: np.ndarray
    boundary: np.ndarray


def check_margin(points, domain: Domain, st: StencilConfig) -> None:
    pts = np.asarray(points, dtype=np.float64)
    tau, x = pts[..., 0], pts[..., 1]
    ok = (tau - st.h_tau >= 0) & (tau + st.h_tau <= domain.T)
    ok &= (x - st.h_x >= -domain.L) & (x + st.h_x <= domain.L)
    if not np.all(ok):
        raise MarginError("a stencil point falls outside the closed domain")


def check_boundary(points, domain: Domain) -> None:
    pts = np.asarray(points, dtype=np.float64)
    tau, x = pts[..., 0], pts[..., 1]
    on = (tau == 0.0) | (x == -domain.L) | (x == domain.L)
    on &= domain.contains(tau, x)
    if not np.all(on):
        raise ContractError("boundary point is not on {tau=0} or {x=+-L}")


def stencil_points(points, st: StencilConfig) -> np.ndarray:
    """(..., 2) centres -> (..., 5, 2): centre, tau+h, tau-h, x+h, x-h."""
    offsets = np.array(
        [[0.0, 0.0], [st.h_tau, 0.0], [-st.h_tau, 0.0], [0.0, st.h_x], [0.0, -st.h_x]]
    )
    return np.asarray(points, dtype=np.float64)[..., None, :] + offsets


def stencil_residual(values, alpha: DiffusionFunction, st: StencilConfig):
    """D_tau - D_xx from the five stencil values along the last axis."""
    centre, tp, tm, xp, xm = (ad.take(values, (Ellipsis, k)) for k in range(5))
    d_tau = ad.mul(ad.sub(tp, tm), 1.0 / (2.0 * st.h_tau))
    a_c = alpha.apply(centre)
    d_xx = ad.add(ad.sub(alpha.apply(xp), ad.mul(a_c, 2.0)), alpha.apply(xm))
    d_xx = ad.mul(d_xx, 1.0 / st.h_x**2)
    return ad.sub(d_tau, d_xx)


def field_residual(field: Callable, tau, x, alpha: DiffusionFunction, st: StencilConfig, domain: Domain | None = None):
    """Stencil residual of an arbitrary field ``field(tau, x)``."""
    centres = np.stack(np.broadcast_arrays(np.asarray(tau, float), np.asarray(x, float)), axis=-1)
    if domain is not None:
        check_margin(centres, domain, st)
    pts = stencil_points(centres, st)
    values = np.asarray(field(pts[..., 0], pts[..., 1]), dtype=np.float64)
    return stencil_residual(values, alpha, st)


def residual(model: DeepOnetModel, g, y, alpha: DiffusionFunction, st: StencilConfig, embedding=None):
    """Residual of the learned operator at one point or an array of points.

    All stencil evaluations share a single branch embedding.
    """
    y = np.asarray(y, dtype=np.float64)
    check_margin(y, model.domain, st)
    values = operator_eval_points(model, g, stencil_points(y, st), embedding=embedding)
    out = stencil_residual(values, alpha, st)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class CollocationBatch:
    """Packed training arrays for ``n`` source functions.

    ``sensor_values`` (n, m); ``interior`` (n, Q, 2); ``boundary`` (n, P, 2);
    ``targets`` (n, Q) holds g at the interior abscissae.
    """

    sensor_values: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray
    targets: np.ndarray

    @property
    def n(self) -> int:
        return self.sensor_values.shape[0]

    def take(self, idx) -> "CollocationBatch":
        return CollocationBatch(self.sensor_values[idx], self.interior[idx], self.boundary[idx], self.targets[idx])


def _check_batch(batch: CollocationBatch, domain: Domain, st: StencilConfig | None) -> None:
    if batch.n == 0 or batch.interior.shape[1] == 0 and batch.boundary.shape[1] == 0:
        raise ContractError("empty dataset")
    if st is not None and batch.interior.size:
        check_margin(batch.interior, domain, st)
    if batch.boundary.size:
        check_boundary(batch.boundary, domain)


def _loss_terms(branch, trunk, bias, model: DeepOnetModel, batch: CollocationBatch, alpha, st):
    """Traceable (physics, operator, per-function squared-error sums)."""
    n, q_pts = batch.interior.shape[:2]
    p_pts = batch.boundary.shape[1]
    stencil = stencil_points(batch.interior, st).reshape(n, 5 * q_pts, 2)
    pts = np.concatenate([stencil, batch.boundary], axis=1)
    out = operator_eval_batch(
        branch, trunk, bias, model.domain, model.rescale_inputs, model.output_scale, batch.sensor_values, pts
    )
    physics = operator = None
    if q_pts:
        sv = ad.reshape(ad.take(out, (slice(None), slice(0, 5 * q_pts))), (n, q_pts, 5))
        mismatch = ad.sub(stencil_residual(sv, alpha, st), batch.targets)
        physics = ad.mean(ad.square(mismatch))
    if p_pts:
        operator = ad.mean(ad.square(ad.take(out, (slice(None), slice(5 * q_pts, None)))))
    return physics, operator, out


def physics_loss(model: DeepOnetModel, batch: CollocationBatch, alpha: DiffusionFunction, st: StencilConfig) -> float:
    """(1/NQ) sum |R(y) - g(x)|^2 over all interior points."""
    if batch.n == 0 or batch.interior.shape[1] == 0:
        raise ContractError("empty dataset")
    check_margin(batch.interior, model.domain, st)
    empty = batch.boundary[:, :0]
    physics, _, _ = _loss_terms(
        model.branch, model.trunk, model.output_bias, model, CollocationBatch(batch.sensor_values, batch.interior, empty, batch.targets), alpha, st
    )
    return float(physics)


def operator_loss(model: DeepOnetModel, batch: CollocationBatch) -> float:
    """Mean squared prediction on the zero initial/boundary data."""
    if batch.n == 0 or batch.boundary.shape[1] == 0:
        raise ContractError("empty dataset")
    check_boundary(batch.boundary, model.domain)
    out = operator_eval_batch(
        model.branch, model.trunk, model.output_bias, model.domain, model.rescale_inputs,
        model.output_scale, batch.sensor_values, batch.boundary,
    )
    return float(np.mean(out * out))


def total_loss(model: DeepOnetModel, batch: CollocationBatch, alpha: DiffusionFunction, st: StencilConfig) -> float:
    return physics_loss(model, batch, alpha, st) + operator_loss(model, batch)


@dataclass(frozen=True)
class LossGradient:
    physics: float
    operator: float
    branch: object
    trunk: object
    bias: float

    @property
    def total(self) -> float:
        return self.physics + self.operator


def loss_gradient(model: DeepOnetModel, batch: CollocationBatch, alpha: DiffusionFunction, st: StencilConfig) -> LossGradient:
    """Losses and the exact gradient of their sum w.r.t. branch, trunk and b0.

    A boundary-only or interior-only batch differentiates just that term.
    """
    _check_batch(batch, model.domain, st)
    parts = {}

    def loss_fn(branch, trunk, bias):
        physics, operator, out = _loss_terms(branch, trunk, bias, model, batch, alpha, st)
        parts["physics"] = 0.0 if physics is None else float(ad.value(physics))
        parts["operator"] = 0.0 if operator is None else float(ad.value(operator))
        parts["out"] = ad.value(out)
        if physics is None:
            return operator
        return physics if operator is None else ad.add(physics, operator)

    _, (g_branch, g_trunk, g_bias) = grad_params(loss_fn, model.branch, model.trunk, model.output_bias)
    _raise_if_poisoned(parts["out"], [g_branch, g_trunk, g_bias], parts["physics"] + parts["operator"])
    return LossGradient(parts["physics"], parts["operator"], g_branch, g_trunk, float(g_bias))


def _raise_if_poisoned(out: np.ndarray, grads, loss: float) -> None:
    bad_rows = np.flatnonzero(~np.all(np.isfinite(out), axis=1))
    if bad_rows.size:
        i = int(bad_rows[0])
        raise PoisonedGradientError(f"non-finite prediction for source function {i}", function_index=i)
    finite = np.isfinite(loss)
    for g in grads:
        arrays = g.arrays() if hasattr(g, "arrays") else [g]
        finite = finite and all(np.all(np.isfinite(a)) for a in arrays)
    if not finite:
        raise PoisonedGradientError("non-finite loss or gradient")
