"""Reference finite-difference solver for  phi_tau - (alpha(phi))_xx = g.

Backward Euler in time, centred second difference of alpha(phi) in space,
zero initial and Dirichlet data.  Each step is a nonlinear system solved by
Newton's method with a tridiagonal Jacobian.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .deeponet import Domain
from .errors import ConfigurationError, DivergenceError, DomainError, NonConvergenceError, SingularSystemError
from .gp import SourceFunction, eval_source
from .physics import DiffusionFunction

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FdmConfig:
    nx: int = 199
    nt: int = 200
    newton_tol: float = 1e-10
    newton_max_iters: int = 50

    def __post_init__(self):
        if self.nx < 3 or self.nt < 1:
            raise ConfigurationError("need nx >= 3 interior nodes and nt >= 1 steps")
        if not (self.newton_tol > 0 and self.newton_max_iters > 0):
            raise ConfigurationError("Newton tolerance and iteration cap must be positive")


@dataclass(frozen=True)
class FdmSolution:
    """``values[n, i]`` is phi at (tau_n, x_i), boundary columns included."""

    values: np.ndarray
    dx: float
    dt: float
    domain: Domain

    @property
    def taus(self) -> np.ndarray:
        return np.linspace(0.0, self.domain.T, self.values.shape[0])

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(-self.domain.L, self.domain.L, self.values.shape[1])


def tridiag_solve(sub, diag, sup, rhs) -> np.ndarray:
    """Thomas algorithm; ``sub``/``sup`` have length n-1."""
    diag = np.asarray(diag, dtype=np.float64)
    n = diag.size
    sub = np.asarray(sub, dtype=np.float64)
    sup = np.asarray(sup, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if sub.size != n - 1 or sup.size != n - 1 or rhs.size != n:
        raise ValueError("inconsistent tridiagonal system sizes")
    c = np.empty(max(n - 1, 0))
    d = np.empty(n)
    piv = diag[0]
    if piv == 0.0:
        raise SingularSystemError("zero pivot at row 0")
    if n > 1:
        c[0] = sup[0] / piv
    d[0] = rhs[0] / piv
    for i in range(1, n):
        piv = diag[i] - sub[i - 1] * c[i - 1]
        if piv == 0.0:
            raise SingularSystemError(f"zero pivot at row {i}")
        if i < n - 1:
            c[i] = sup[i] / piv
        d[i] = (rhs[i] - sub[i - 1] * d[i - 1]) / piv
    for i in range(n - 2, -1, -1):
        d[i] -= c[i] * d[i + 1]
    return d


def _newton_step(prev, forcing, r, dt, alpha: DiffusionFunction, cfg: FdmConfig, on_update=None):
    u = prev.copy()
    nx = u.size
    pad = np.zeros(nx + 2)
    for _ in range(cfg.newton_max_iters):
        pad[1:-1] = u
        a = alpha(pad)
        resid = u - prev - r * (a[2:] - 2.0 * a[1:-1] + a[:-2]) - dt * forcing
        da = alpha.derivative(u)
        du = tridiag_solve(-r * da[:-1], 1.0 + 2.0 * r * da, -r * da[1:], -resid)
        u = u + du
        norm = float(np.max(np.abs(du)))
        if on_update is not None:
            on_update(norm)
        if not np.isfinite(norm):
            raise DivergenceError("Newton iteration produced a non-finite update")
        if norm < cfg.newton_tol:
            return u
    raise NonConvergenceError(f"Newton did not converge in {cfg.newton_max_iters} iterations")


def _advance(prev, tau0, dt, dx, xs_inner, forcing_fn, alpha, cfg, on_update):
    """One time step, retried once as two half steps on Newton failure."""
    r = dt / dx**2
    try:
        return _newton_step(prev, forcing_fn(tau0 + dt, xs_inner), r, dt, alpha, cfg, on_update)
    except (NonConvergenceError, SingularSystemError):
        log.info("Newton failed at tau=%.6g; retrying with dt/2", tau0 + dt)
    half = 0.5 * dt
    mid = _newton_step(prev, forcing_fn(tau0 + half, xs_inner), half / dx**2, half, alpha, cfg, on_update)
    return _newton_step(mid, forcing_fn(tau0 + dt, xs_inner), half / dx**2, half, alpha, cfg, on_update)


def solve_fdm_forced(
    g_field: Callable,
    domain: Domain = Domain(),
    cfg: FdmConfig = FdmConfig(),
    alpha: DiffusionFunction = DiffusionFunction(),
    on_update: Callable[[float], None] | None = None,
) -> FdmSolution:
    """Solve with a time-dependent forcing ``g_field(tau, x)``.

    ``on_update`` receives the max-norm of every Newton update, in order.
    """
    dx = 2.0 * domain.L / (cfg.nx + 1)
    dt = domain.T / cfg.nt
    xs_inner = np.linspace(-domain.L, domain.L, cfg.nx + 2)[1:-1]
    values = np.zeros((cfg.nt + 1, cfg.nx + 2))
    u = np.zeros(cfg.nx)
    for n in range(cfg.nt):
        try:
            u = _advance(u, n * dt, dt, dx, xs_inner, g_field, alpha, cfg, on_update)
        except DivergenceError as exc:
            raise DivergenceError(f"solution diverged at time step {n + 1}", step=n + 1) from exc
        except (NonConvergenceError, SingularSystemError) as exc:
            raise NonConvergenceError(f"Newton failed at time step {n + 1}: {exc}", step=n + 1) from exc
        if not np.all(np.isfinite(u)):
            raise DivergenceError(f"non-finite solution at time step {n + 1}", step=n + 1)
        values[n + 1, 1:-1] = u
    return FdmSolution(values, dx, dt, domain)


def solve_fdm(
    g: SourceFunction | Callable,
    domain: Domain = Domain(),
    cfg: FdmConfig = FdmConfig(),
    alpha: DiffusionFunction = DiffusionFunction(),
) -> FdmSolution:
    """Solve with a time-independent source ``g(x)``."""
    if isinstance(g, SourceFunction):
        def gx(x):
            return eval_source(g, x)
    else:
        gx = g
    cache = {}

    def forcing(tau, x):
        # evaluated once, reused at every level
        if "v" not in cache:
            cache["v"] = np.asarray(gx(x), dtype=np.float64)
        return cache["v"]

    return solve_fdm_forced(forcing, domain, cfg, alpha)


def _snap(s: np.ndarray) -> np.ndarray:
    # grid coordinates within rounding of a node are treated as the node
    k = np.round(s)
    return np.where(np.abs(s - k) < 1e-9, k, s)


def interpolate(sol: FdmSolution, tau, x):
    """Bilinear interpolation on the space-time grid; exact at nodes."""
    tau = np.asarray(tau, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    T, L = sol.domain.T, sol.domain.L
    if np.any(~sol.domain.contains(tau, x)):
        raise DomainError(f"point outside [0, {T}] x [-{L}, {L}]")
    nt, nxp = sol.values.shape[0] - 1, sol.values.shape[1] - 1
    st = _snap(tau / sol.dt)
    sx = _snap((x + L) / sol.dx)
    i = np.clip(np.floor(st).astype(int), 0, nt - 1)
    j = np.clip(np.floor(sx).astype(int), 0, nxp - 1)
    ft = st - i
    fx = sx - j
    v = sol.values
    out = (
        (1 - ft) * (1 - fx) * v[i, j]
        + (1 - ft) * fx * v[i, j + 1]
        + ft * (1 - fx) * v[i + 1, j]
        + ft * fx * v[i + 1, j + 1]
    )
    return float(out) if out.ndim == 0 else out
