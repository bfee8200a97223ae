"""Flat ``key = value`` run configuration with ``#`` comments.

Unknown keys are rejected; missing keys take the defaults below.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .deeponet import Domain
from .errors import ConfigurationError
from .fdm import FdmConfig
from .gp import GpConfig
from .nnet import Activation
from .physics import DiffusionFunction, StencilConfig
from .pipeline import TrainConfig


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


def _optional_float(text: str) -> float | None:
    return None if text.lower() in ("", "auto", "none") else float(text)


def _optional_int(text: str) -> int | None:
    return None if text.lower() in ("", "all", "none", "0") else int(text)


@dataclass
class RunConfig:
    # domain
    T: float = 1.0
    L: float = 1.0
    # gaussian process
    variance: float = 1.0
    length_scale: float = 0.2
    jitter: float = 1e-10
    max_jitter: float = 1e-4
    # training
    N: int = 500
    m: int = 100
    P: int = 100
    Q: int = 100
    iterations: int = 10000
    learning_rate: float = 1e-3
    seed: int = 0
    activation: str = "relu"
    q: int = 64
    hidden: tuple[int, ...] = (64, 64)
    output_scale: float | None = None
    functions_per_batch: int | None = None
    log_every: int = 100
    # stencil (auto = 1% of the domain extent)
    h_x: float | None = None
    h_tau: float | None = None
    # pde
    diffusion: str = "power:2"
    # reference solver
    nx: int = 199
    nt: int = 200
    newton_tol: float = 1e-10
    newton_max_iters: int = 50
    # evaluation
    n_test: int = 10
    eval_grid: int = 50
    # outputs
    dataset_path: str = "dataset.bin"
    checkpoint_path: str = "model.ckpt"
    metrics_path: str = "metrics.csv"
    report_path: str = "report.csv"
    fields_prefix: str = "fields"

    @property
    def domain(self) -> Domain:
        return Domain(self.T, self.L)

    @property
    def gp(self) -> GpConfig:
        return GpConfig(self.variance, self.length_scale, self.jitter, max_jitter=self.max_jitter)

    @property
    def alpha(self) -> DiffusionFunction:
        return DiffusionFunction.parse(self.diffusion)

    @property
    def fdm(self) -> FdmConfig:
        return FdmConfig(self.nx, self.nt, self.newton_tol, self.newton_max_iters)

    @property
    def stencil(self) -> StencilConfig:
        return self.train.stencil(self.domain)

    @property
    def c(self) -> float:
        """Output scale; defaults to 1/q."""
        return 1.0 / self.q if self.output_scale is None else self.output_scale

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(
            N=self.N, m=self.m, P=self.P, Q=self.Q, iterations=self.iterations,
            learning_rate=self.learning_rate, seed=self.seed, activation=Activation(self.activation),
            q=self.q, hidden=self.hidden, output_scale=self.c, h_x=self.h_x, h_tau=self.h_tau,
            functions_per_batch=self.functions_per_batch, log_every=self.log_every,
        )

    def validate(self) -> "RunConfig":
        """Build every derived config once so errors surface early."""
        try:
            self.domain, self.gp, self.alpha, self.fdm, self.train, self.stencil
            Activation(self.activation)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        if self.n_test < 0 or self.eval_grid < 2:
            raise ConfigurationError("n_test must be >= 0 and eval_grid >= 2")
        return self

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


_PARSERS = {
    "hidden": _int_tuple,
    "output_scale": _optional_float,
    "h_x": _optional_float,
    "h_tau": _optional_float,
    "functions_per_batch": _optional_int,
}


def _parser_for(f):
    if f.name in _PARSERS:
        return _PARSERS[f.name]
    default = f.default
    if isinstance(default, bool):
        return lambda s: s.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    known = {f.name: f for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ConfigurationError(f"{source}:{lineno}: expected key = value")
        if key not in known:
            raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _parser_for(known[key])(val)
        except ValueError:
            raise ConfigurationError(f"{source}:{lineno}: bad value {val!r} for {key!r}") from None
    return RunConfig(**values).validate()


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))
