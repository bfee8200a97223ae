"""Dataset assembly, training, and evaluation against the FDM oracle."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rng
from .deeponet import DeepOnetModel, Domain, operator_eval_grid
from .errors import ConfigurationError, NonConvergenceError, PoisonedGradientError
from .fdm import FdmConfig, FdmSolution, interpolate, solve_fdm
from .gp import GpConfig, SensorGrid, SourceFunction, SourceSampler
from .nnet import Activation, adam_state_for, adam_step
from .physics import CollocationBatch, CollocationSet, DiffusionFunction, StencilConfig, loss_gradient

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    N: int = 500
    m: int = 100
    P: int = 100
    Q: int = 100
    iterations: int = 10000
    learning_rate: float = 1e-3
    seed: int = 0
    activation: Activation = Activation.RELU
    q: int = 64
    hidden: tuple[int, ...] = (64, 64)
    output_scale: float = 1.0
    h_x: float | None = None
    h_tau: float | None = None
    functions_per_batch: int | None = None
    log_every: int = 100

    def __post_init__(self):
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for name in ("N", "m", "P", "Q", "q", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.m < 2:
            raise ConfigurationError("need at least two sensors")
        if self.iterations < 0:
            raise ConfigurationError("iterations must be non-negative")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.functions_per_batch is not None and not 1 <= self.functions_per_batch:
            raise ConfigurationError("functions_per_batch must be positive")

    def stencil(self, domain: Domain) -> StencilConfig:
        base = StencilConfig.for_domain(domain)
        return StencilConfig(
            h_x=base.h_x if self.h_x is None else self.h_x,
            h_tau=base.h_tau if self.h_tau is None else self.h_tau,
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    sources: tuple[SourceFunction, ...]
    collocation: tuple[CollocationSet, ...]
    grid: SensorGrid
    domain: Domain
    seed: int

    def __len__(self) -> int:
        return len(self.sources)

    @property
    def m(self) -> int:
        return self.grid.m

    @property
    def P(self) -> int:
        return self.collocation[0].boundary.shape[0] if self.collocation else 0

    @property
    def Q(self) -> int:
        return self.collocation[0].interior.shape[0] if self.collocation else 0

    def batch(self, indices: Sequence[int] | None = None) -> CollocationBatch:
        idx = range(len(self)) if indices is None else indices
        sv = np.stack([self.sources[i].sensor_values for i in idx])
        interior = np.stack([self.collocation[i].interior for i in idx])
        boundary = np.stack([self.collocation[i].boundary for i in idx])
        targets = np.stack([self.sources[i](self.collocation[i].interior[:, 1]) for i in idx])
        return CollocationBatch(sv, interior, boundary, targets)


def sample_collocation(seed: int, index: int, P: int, Q: int, domain: Domain, st: StencilConfig) -> CollocationSet:
    """Interior points uniform inside the stencil margin; boundary split
    ceil(P/2) on tau = 0, the rest over x = -L and x = +L."""
    gi = rng.stream(seed, rng.INTERIOR, index)
    u = rng.uniforms(gi, 2 * Q).reshape(Q, 2)
    interior = np.empty((Q, 2))
    interior[:, 0] = st.h_tau + u[:, 0] * (domain.T - 2 * st.h_tau)
    interior[:, 1] = -domain.L + st.h_x + u[:, 1] * (2 * domain.L - 2 * st.h_x)

    gb = rng.stream(seed, rng.BOUNDARY, index)
    n_init = math.ceil(P / 2)
    n_side = P - n_init
    n_left = math.ceil(n_side / 2)
    u = rng.uniforms(gb, P)
    boundary = np.empty((P, 2))
    boundary[:n_init, 0] = 0.0
    boundary[:n_init, 1] = -domain.L + 2 * domain.L * u[:n_init]
    boundary[n_init:, 0] = domain.T * u[n_init:]
    boundary[n_init:n_init + n_left, 1] = -domain.L
    boundary[n_init + n_left:, 1] = domain.L
    return CollocationSet(interior, boundary)


def generate_dataset(cfg: TrainConfig, gp_cfg: GpConfig = GpConfig(), domain: Domain = Domain()) -> Dataset:
    st = cfg.stencil(domain)
    if 2 * st.h_tau >= domain.T or 2 * st.h_x >= 2 * domain.L:
        raise ConfigurationError("stencil steps leave no interior room for collocation")
    grid = SensorGrid.uniform(cfg.m, domain.L)
    sampler = SourceSampler(grid, gp_cfg)
    sources = tuple(sampler.draw(cfg.seed, i) for i in range(cfg.N))
    colloc = tuple(sample_collocation(cfg.seed, i, cfg.P, cfg.Q, domain, st) for i in range(cfg.N))
    return Dataset(sources, colloc, grid, domain, cfg.seed)


def sample_test_functions(n: int, seed: int, m: int, gp_cfg: GpConfig = GpConfig(), domain: Domain = Domain()):
    """Held-out sources from the same GP on a stream disjoint from training."""
    if n == 0:
        return []
    sampler = SourceSampler(SensorGrid.uniform(m, domain.L), gp_cfg)
    return [sampler.draw(seed, k, tag=rng.TEST_SOURCE) for k in range(n)]


@dataclass
class MetricHistory:
    iteration: list[int] = field(default_factory=list)
    physics_loss: list[float] = field(default_factory=list)
    operator_loss: list[float] = field(default_factory=list)
    total_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    HEADER = ("iteration", "physics_loss", "operator_loss", "total_loss", "seconds")

    def append(self, iteration: int, physics: float, operator: float, seconds: float) -> None:
        if self.iteration and iteration <= self.iteration[-1]:
            raise ValueError("logged iterations must increase")
        self.iteration.append(int(iteration))
        self.physics_loss.append(float(physics))
        self.operator_loss.append(float(operator))
        self.total_loss.append(float(physics) + float(operator))
        self.seconds.append(float(seconds))

    def __len__(self) -> int:
        return len(self.iteration)

    def rows(self):
        return zip(self.iteration, self.physics_loss, self.operator_loss, self.total_loss, self.seconds)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.HEADER)
            for it, p, o, t, s in self.rows():
                w.writerow([it, repr(p), repr(o), repr(t), f"{s:.3f}"])

    @classmethod
    def from_csv(cls, path) -> "MetricHistory":
        hist = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != cls.HEADER:
                raise ValueError(f"unexpected metrics header {header}")
            for row in reader:
                hist.iteration.append(int(row[0]))
                hist.physics_loss.append(float(row[1]))
                hist.operator_loss.append(float(row[2]))
                hist.total_loss.append(float(row[3]))
                hist.seconds.append(float(row[4]))
        return hist


class TrainingAborted(PoisonedGradientError):
    """Poisoned gradient mid-training; carries the last good state."""

    def __init__(self, cause: PoisonedGradientError, iteration: int, model: DeepOnetModel, history: MetricHistory):
        super().__init__(f"training aborted at iteration {iteration}: {cause}", iteration, cause.function_index)
        self.model = model
        self.history = history


def _batch_indices(cfg: TrainConfig, n: int, iteration: int):
    if cfg.functions_per_batch is None or cfg.functions_per_batch >= n:
        return None
    gen = rng.stream(cfg.seed, rng.BATCH, iteration)
    return np.sort(gen.permutation(n)[: cfg.functions_per_batch])


def train(
    model: DeepOnetModel,
    dataset: Dataset,
    cfg: TrainConfig,
    alpha: DiffusionFunction,
    on_log: Callable[[int, float, float], None] | None = None,
) -> tuple[DeepOnetModel, MetricHistory]:
    """ADAM on physics + operator loss; a history row every ``log_every``
    iterations and at the end.  Raises :class:`TrainingAborted`."""
    if model.m != dataset.m:
        raise ConfigurationError(f"model expects m={model.m} sensors, dataset has {dataset.m}")
    if model.domain != dataset.domain:
        raise ConfigurationError("model and dataset domains differ")
    st = cfg.stencil(dataset.domain)
    full = dataset.batch()
    params = (model.branch, model.trunk, model.output_bias)
    state = adam_state_for(params, learning_rate=cfg.learning_rate)
    history = MetricHistory()
    start = time.perf_counter()
    for it in range(cfg.iterations + 1):
        idx = _batch_indices(cfg, len(dataset), it)
        batch = full if idx is None else full.take(idx)
        try:
            lg = loss_gradient(model, batch, alpha, st)
        except PoisonedGradientError as exc:
            raise TrainingAborted(exc, it, model, history) from exc
        if it % cfg.log_every == 0 or it == cfg.iterations:
            history.append(it, lg.physics, lg.operator, time.perf_counter() - start)
            if on_log is not None:
                on_log(it, lg.physics, lg.operator)
        if it == cfg.iterations:
            break
        try:
            params, state = adam_step(params, (lg.branch, lg.trunk, lg.bias), state, iteration=it)
        except PoisonedGradientError as exc:
            raise TrainingAborted(exc, it, model, history) from exc
        model = model.with_params(*params)
    return model, history


@dataclass
class ErrorReport:
    index: list[int] = field(default_factory=list)
    rel_l2: list[float] = field(default_factory=list)
    max_err: list[float] = field(default_factory=list)
    failed: list[tuple[int, str]] = field(default_factory=list)

    @property
    def mean_rel_l2(self) -> float:
        return float(np.mean(self.rel_l2)) if self.rel_l2 else float("nan")

    @property
    def median_rel_l2(self) -> float:
        return float(np.median(self.rel_l2)) if self.rel_l2 else float("nan")

    @property
    def mean_max_err(self) -> float:
        return float(np.mean(self.max_err)) if self.max_err else float("nan")

    @property
    def median_max_err(self) -> float:
        return float(np.median(self.max_err)) if self.max_err else float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["function", "rel_l2", "max_err", "status"])
            for i, r, e in zip(self.index, self.rel_l2, self.max_err):
                w.writerow([i, repr(r), repr(e), "ok"])
            for i, why in self.failed:
                w.writerow([i, "", "", f"fdm_failed: {why}"])
            if self.rel_l2:
                w.writerow(["mean", repr(self.mean_rel_l2), repr(self.mean_max_err), f"n={len(self.rel_l2)}"])
                w.writerow(["median", repr(self.median_rel_l2), repr(self.median_max_err), f"n={len(self.rel_l2)}"])


Predictor = Callable[[SourceFunction, np.ndarray, np.ndarray], np.ndarray]


def fdm_on_grid(sol: FdmSolution, taus, xs) -> np.ndarray:
    tt, xx = np.meshgrid(taus, xs, indexing="ij")
    return interpolate(sol, tt, xx)


def evaluate(
    model: DeepOnetModel | Predictor,
    test_functions: Sequence[SourceFunction],
    domain: Domain,
    fdm_cfg: FdmConfig = FdmConfig(),
    alpha: DiffusionFunction = DiffusionFunction(),
    grid_n: int = 50,
) -> ErrorReport:
    """Relative L2 and max-norm error of the predicted field vs the FDM field
    on a ``grid_n x grid_n`` uniform grid over the closed domain.

    ``model`` may be a callable ``(g, taus, xs) -> field``, which lets a
    reference solver stand in for the network.
    """
    taus = np.linspace(0.0, domain.T, grid_n)
    xs = np.linspace(-domain.L, domain.L, grid_n)
    if isinstance(model, DeepOnetModel):
        def predict(g, t, x):
            return operator_eval_grid(model, g, t, x)
    else:
        predict = model
    report = ErrorReport()
    for k, g in enumerate(test_functions):
        try:
            sol = solve_fdm(g, domain, fdm_cfg, alpha)
        except NonConvergenceError as exc:
            log.warning("FDM failed for test function %d: %s", k, exc)
            report.failed.append((k, str(exc)))
            continue
        ref = fdm_on_grid(sol, taus, xs)
        pred = np.asarray(predict(g, taus, xs), dtype=np.float64)
        diff = pred - ref
        ref_norm = np.linalg.norm(ref)
        report.index.append(k)
        if ref_norm > 0:
            rel = float(np.linalg.norm(diff) / ref_norm)
        else:
            rel = 0.0 if not np.any(diff) else math.inf
        report.rel_l2.append(rel)
        report.max_err.append(float(np.max(np.abs(diff))))
    return report


def fdm_predictor(domain: Domain, fdm_cfg: FdmConfig, alpha: DiffusionFunction) -> Predictor:
    """Predictor backed by the FDM solver itself (oracle self-test)."""

    def predict(g, taus, xs):
        return fdm_on_grid(solve_fdm(g, domain, fdm_cfg, alpha), taus, xs)

    return predict
