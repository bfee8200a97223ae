"""Zero-mean Gaussian-process sampling of source terms on fixed sensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import rng
from .errors import ConfigurationError, DomainError, NotPositiveDefiniteError, ShapeError


@dataclass(frozen=True)
class GpConfig:
    variance: float = 1.0
    length_scale: float = 0.2
    jitter: float = 1e-10
    jitter_factor: float = 10.0
    max_jitter: float = 1e-4

    def __post_init__(self):
        if self.variance < 0:
            raise ConfigurationError("GP variance must be non-negative")
        if not self.length_scale > 0:
            raise ConfigurationError("GP length_scale must be positive")
        if not (0 < self.jitter <= self.max_jitter and self.jitter_factor > 1):
            raise ConfigurationError("jitter ladder must start positive, grow, and be bounded")

    def jitter_ladder(self) -> list[float]:
        ladder = [self.jitter]
        while ladder[-1] * self.jitter_factor <= self.max_jitter * (1 + 1e-12):
            ladder.append(ladder[-1] * self.jitter_factor)
        return ladder


@dataclass(frozen=True)
class SensorGrid:
    positions: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=np.float64)
        if p.ndim != 1 or p.size < 2 or not np.all(np.diff(p) > 0):
            raise ConfigurationError("sensor positions must be a strictly increasing vector of length >= 2")
        p.setflags(write=False)
        object.__setattr__(self, "positions", p)

    @classmethod
    def uniform(cls, m: int, half_width: float = 1.0) -> "SensorGrid":
        if m < 2 or not half_width > 0:
            raise ConfigurationError("need m >= 2 sensors and a positive half-width")
        return cls(np.linspace(-half_width, half_width, m))

    @property
    def m(self) -> int:
        return self.positions.size

    @property
    def half_width(self) -> float:
        return float(self.positions[-1])

    def __eq__(self, other):
        return isinstance(other, SensorGrid) and np.array_equal(self.positions, other.positions)

    def __hash__(self):
        return hash(self.positions.tobytes())


@dataclass(frozen=True, eq=False)
class SourceFunction:
    """A source term known by its values at the sensors."""

    sensor_values: np.ndarray
    sensors: SensorGrid

    def __post_init__(self):
        v = np.array(self.sensor_values, dtype=np.float64)
        if v.shape != (self.sensors.m,):
            raise ShapeError(f"expected {self.sensors.m} sensor values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("sensor values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "sensor_values", v)

    def __call__(self, x):
        return eval_source(self, x)

    def __eq__(self, other):
        return (
            isinstance(other, SourceFunction)
            and self.sensors == other.sensors
            and np.array_equal(self.sensor_values, other.sensor_values)
        )


def kernel_matrix(grid: SensorGrid, cfg: GpConfig) -> np.ndarray:
    x = grid.positions
    d = x[:, None] - x[None, :]
    return cfg.variance * np.exp(-(d * d) / (2.0 * cfg.length_scale**2))


def cholesky_jittered(K: np.ndarray, cfg: GpConfig) -> np.ndarray:
    """Lower Cholesky factor of ``K + lam*I`` for the first workable ``lam``."""
    K = np.asarray(K, dtype=np.float64)
    eye = np.eye(K.shape[0])
    for lam in cfg.jitter_ladder():
        try:
            return scipy.linalg.cholesky(K + lam * eye, lower=True, check_finite=True)
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefiniteError(f"kernel matrix not positive definite even with jitter {cfg.max_jitter:g}")


def sample_source(L_factor: np.ndarray, grid: SensorGrid, seed: int, tag: int = rng.SOURCE, index: int = 0) -> SourceFunction:
    z = rng.standard_normals(rng.stream(seed, tag, index), grid.m)
    return SourceFunction(L_factor @ z, grid)


def eval_source(g: SourceFunction, x):
    """Piecewise-linear interpolation between neighbouring sensors."""
    xs = g.sensors.positions
    xa = np.asarray(x, dtype=np.float64)
    if np.any(xa < xs[0]) or np.any(xa > xs[-1]) or np.any(np.isnan(xa)):
        raise DomainError(f"x outside [{xs[0]}, {xs[-1]}]")
    out = np.interp(xa, xs, g.sensor_values)
    return float(out) if out.ndim == 0 else out


class SourceSampler:
    """Factor the kernel once and draw any number of source functions."""

    def __init__(self, grid: SensorGrid, cfg: GpConfig = GpConfig()):
        self.grid = grid
        self.cfg = cfg
        self.factor = cholesky_jittered(kernel_matrix(grid, cfg), cfg)

    def draw(self, seed: int, index: int, tag: int = rng.SOURCE) -> SourceFunction:
        return sample_source(self.factor, self.grid, seed, tag, index)
