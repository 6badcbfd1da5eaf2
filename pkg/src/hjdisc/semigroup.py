"""Backward/forward solution semigroups by a semi-Lagrangian scheme.

One backward step of size ``dt`` from ``phi`` is

    (T phi)(x_i) = min_{|v| <= v_max} exp(-lambda(x_i) dt) phi(x_i - v dt) + w(x_i) (l(x_i, v) + c)

with ``phi`` linearly interpolated and ``w = (1 - exp(-lambda dt)) / lambda``
the exact discounted weight of one step.  The forward semigroup is obtained by
duality, ``T+ phi = -T-[reflected model](-phi)``.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import os
import warnings
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import kernels
from .grid import GridFn, PeriodicGrid, dist_torus, fmt, gradient, gridfn_to_csv
from .model import FD_STEP, ContactModel, HamiltonianKind, model_constants

logger = logging.getLogger(__name__)

DEFAULT_GRID = PeriodicGrid(512)


class Direction(str, enum.Enum):
    BACKWARD = "Backward"
    FORWARD = "Forward"


class NoStationarySolution(RuntimeError):
    pass


class DivergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SemigroupConfig:
    dt: float = 2e-3
    v_max: float = 12.0
    n_v: int = 49
    refine_iters: int = 40
    t_max: float = 400.0
    tol: float = 1e-8
    M_div: float = 20.0
    method: str = "exact"  # or "golden"
    v_table: int = 481
    backend: str | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")
        if self.n_v < 9:
            raise ValueError("n_v must be at least 9")
        if not self.M_div > 0:
            raise ValueError("M_div must be positive")
        if self.refine_iters < 0 or self.t_max <= 0 or self.tol <= 0:
            raise ValueError("refine_iters >= 0, t_max > 0 and tol > 0 required")
        if self.method not in ("exact", "golden"):
            raise ValueError(f"unknown method {self.method!r}")

    def replace(self, **kw) -> "SemigroupConfig":
        return replace(self, **kw)


@dataclass
class EvolutionTrace:
    times: np.ndarray
    dist_to_ref: np.ndarray
    min_val: np.ndarray
    max_val: np.ndarray
    change_rate: np.ndarray
    diverged: bool = False
    vmax_hit_fraction: float = 0.0

    def __len__(self) -> int:
        return len(self.times)

    def to_csv(self, path=None) -> str:
        lines = ["t,dist,min,max"]
        for row in zip(self.times, self.dist_to_ref, self.min_val, self.max_val):
            lines.append(",".join(fmt(v) for v in row))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "EvolutionTrace":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], data[:, 2], data[:, 3], np.full(len(data), np.nan))


@dataclass
class StationarySolution:
    u: GridFn
    c: float
    direction: Direction
    residual: float
    iterations: int
    dt: float = 0.0

    def sidecar(self) -> dict:
        return {
            "c": self.c,
            "direction": Direction(self.direction).value,
            "residual": self.residual,
            "iterations": self.iterations,
            "n": self.u.grid.n,
            "dt": self.dt,
        }

    def save(self, csv_path, json_path=None) -> None:
        gridfn_to_csv(self.u, csv_path, header=("x", "u"))
        json_path = json_path or os.path.splitext(csv_path)[0] + ".json"
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# discretization
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Scheme:
    decay: np.ndarray
    weight: np.ndarray
    mode: int
    q2: float
    q1: np.ndarray
    q0: np.ndarray
    vtab: np.ndarray
    ltab: np.ndarray


def _legendre_table(model: ContactModel, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``l(x_i, v_j)`` for a tabulated h by inverting ``p -> h_p(x, p)``."""
    h = model.h
    P = h.p_max - 2 * FD_STEP  # h.dp differences reach FD_STEP past p
    p = np.linspace(-P, P, 8193)
    out = np.empty((x.size, v.size))
    for i, xi in enumerate(x):
        hp = h.dp(np.full_like(p, xi), p)
        if v[0] < hp[0] or v[-1] > hp[-1]:
            raise ValueError("momentum range too small")
        pstar = np.interp(v, hp, p)
        out[i] = pstar * v - h(np.full_like(pstar, xi), pstar)
    return out


@lru_cache(maxsize=64)
def _scheme(model: ContactModel, n: int, dt: float, v_max: float, v_table: int) -> _Scheme:
    x = PeriodicGrid(n).nodes
    lam = model.lam(x)
    decay = np.ascontiguousarray(np.exp(-lam * dt))
    # exact integral of exp(-lambda s) over one step; -> dt as lambda -> 0
    small = np.abs(lam * dt) < 1e-8
    weight = np.where(small, dt * (1.0 - 0.5 * lam * dt), -np.expm1(-lam * dt) / np.where(small, 1.0, lam))
    weight = np.ascontiguousarray(weight)
    coeffs = model.h.lagrangian_coefficients(x)
    empty_t = np.zeros((1, 2))
    if coeffs is not None:
        q2, q1, q0 = coeffs
        return _Scheme(decay, weight, 0, float(q2), np.ascontiguousarray(q1, float),
                       np.ascontiguousarray(q0, float), np.zeros(2), empty_t)
    vtab = np.linspace(-v_max, v_max, v_table)
    ltab = np.ascontiguousarray(_legendre_table(model, x, vtab))
    return _Scheme(decay, weight, 1, 0.0, np.zeros(n), np.zeros(n), vtab, ltab)


def _nsteps(t: float, dt: float) -> tuple[int, float]:
    k = max(1, int(math.ceil(t / dt - 1e-9)))
    return k, t / k


def _run(model, values, grid, dt, cfg, nsteps, ref=None, bound=math.inf, stop_rate=-1.0):
    if cfg.v_max * dt / grid.dx >= grid.n / 2:
        raise ValueError("v_max*dt spans more than half the circle; reduce dt")
    s = _scheme(model, grid.n, float(dt), float(cfg.v_max), int(cfg.v_table))
    backend = kernels.get(cfg.backend)
    threads = kernels.thread_count() if grid.n >= 4096 else 1
    return backend.run(
        np.ascontiguousarray(values, float), s.decay, s.weight, dt, model.c, grid.dx, cfg.v_max,
        s.mode, s.q2, s.q1, s.q0, s.vtab, s.ltab, int(nsteps),
        ref=None if ref is None else np.ascontiguousarray(ref, float),
        bound=float(bound), stop_rate=float(stop_rate),
        method=0 if cfg.method == "exact" else 1, n_v=cfg.n_v,
        refine_iters=cfg.refine_iters, threads=threads,
    )


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def step_backward(model: ContactModel, phi: GridFn, cfg: SemigroupConfig = SemigroupConfig()) -> GridFn:
    """One backward step of length ``cfg.dt``."""
    out, _, status = _run(model, phi.values, phi.grid, cfg.dt, cfg, 1, bound=10 * cfg.M_div)
    if status == 1:
        raise DivergenceError("step left the divergence window")
    return GridFn(phi.grid, out)


def evolve(
    model: ContactModel,
    phi: GridFn,
    t_final: float,
    direction: Direction | str = Direction.BACKWARD,
    cfg: SemigroupConfig = SemigroupConfig(),
    reference: GridFn | None = None,
) -> tuple[GridFn, EvolutionTrace]:
    """Evolve ``phi`` for time ``t_final``.

    The trace stops at the step where a value leaves ``[-10 M_div, 10 M_div]``;
    the returned function is then the last computed state.
    """
    if not t_final > 0:
        raise ValueError("t_final must be positive")
    direction = Direction(direction)
    if direction is Direction.FORWARD:
        neg_ref = None if reference is None else -reference
        out, tr = evolve(model.reflect(), -phi, t_final, Direction.BACKWARD, cfg, neg_ref)
        tr.min_val, tr.max_val = -tr.max_val, -tr.min_val
        return -out, tr
    k, dt = _nsteps(t_final, cfg.dt)
    ref = None if reference is None else reference.values
    values, stats, status = _run(model, phi.values, phi.grid, dt, cfg, k, ref=ref, bound=10 * cfg.M_div)
    trace = _trace(stats, dt, status == 1, have_ref=reference is not None)
    _warn_window(trace)
    if not np.all(np.isfinite(values)):
        raise DivergenceError("non-finite values")
    return GridFn(phi.grid, values), trace


def _trace(stats, dt, diverged, have_ref=True, t0=0.0):
    times = t0 + dt * np.arange(1, len(stats) + 1)
    dist = stats[:, 0] if have_ref else np.full(len(stats), np.nan)
    return EvolutionTrace(
        times=times,
        dist_to_ref=dist,
        min_val=stats[:, 1].copy(),
        max_val=stats[:, 2].copy(),
        change_rate=stats[:, 3].copy(),
        diverged=bool(diverged),
        vmax_hit_fraction=float(stats[:, 4].max()) if len(stats) else 0.0,
    )


def _warn_window(trace: EvolutionTrace) -> None:
    if trace.vmax_hit_fraction > 0.01:
        warnings.warn(
            f"{trace.vmax_hit_fraction:.1%} of nodes hit the velocity bound; increase v_max",
            RuntimeWarning,
            stacklevel=3,
        )


def initial_upper_constant(model: ContactModel) -> float:
    """Constant above every subsolution: ``(c - e0)/lambda_+ + 1 + E0``."""
    k = model_constants(model)
    if not k.lambda_plus > 0:
        raise ValueError("backward stationary solve needs max lambda > 0")
    return (model.c - k.e0) / k.lambda_plus + 1.0 + k.E0


def solve_stationary(
    model: ContactModel,
    direction: Direction | str = Direction.BACKWARD,
    cfg: SemigroupConfig = SemigroupConfig(),
    grid: PeriodicGrid = DEFAULT_GRID,
    phi0: GridFn | None = None,
) -> StationarySolution:
    """Iterate the semigroup until the per-unit-time change drops below ``cfg.tol``.

    Backward starts from a constant above all subsolutions, so the limit is the
    maximal solution; Forward is the dual construction on the reflected model.
    """
    direction = Direction(direction)
    if direction is Direction.FORWARD:
        init = None if phi0 is None else -phi0
        sol = solve_stationary(model.reflect(), Direction.BACKWARD, cfg, grid, init)
        return replace(sol, u=-sol.u, c=model.c, direction=Direction.FORWARD)
    if phi0 is None:
        phi0 = GridFn.constant(grid, initial_upper_constant(model))
    k, dt = _nsteps(cfg.t_max, cfg.dt)
    values, stats, status = _run(model, phi0.values, phi0.grid, dt, cfg, k,
                                 bound=cfg.M_div, stop_rate=cfg.tol)
    if status == 1:
        raise NoStationarySolution("no stationary solution detected (semigroup diverged)")
    if status != 2:
        raise NoStationarySolution(
            f"no stationary solution detected within t_max={cfg.t_max} "
            f"(last change rate {stats[-1, 3]:.3g})"
        )
    tr = _trace(stats, dt, False, have_ref=False)
    _warn_window(tr)
    return StationarySolution(
        u=GridFn(phi0.grid, values),
        c=model.c,
        direction=Direction.BACKWARD,
        residual=float(stats[-1, 3]),
        iterations=len(stats),
        dt=dt,
    )


def subsolution_residual(model: ContactModel, phi: GridFn) -> float:
    """``max_i lambda(x_i) phi_i + h(x_i, D phi_i) - c`` with centered ``D``."""
    x = phi.grid.nodes
    p = gradient(phi).values
    return float(np.max(model.lam(x) * phi.values + model.h(x, p) - model.c))


def lipschitz_estimate(model: ContactModel, level: float) -> float:
    """Largest ``|p|`` with ``h(x, p) <= level`` over sampled ``x``."""
    x = PeriodicGrid(256).nodes
    P = model.h.p_max if model.h.kind is HamiltonianKind.TABULATED else 64.0
    p = np.linspace(-P, P, 4097)
    ok = model.h(x[:, None], p[None, :]) <= level
    return float(np.abs(p)[ok.any(axis=0)].max(initial=0.0))


def action_function(
    model: ContactModel,
    x0: float,
    u0: float,
    t: float,
    cfg: SemigroupConfig = SemigroupConfig(),
    grid: PeriodicGrid = DEFAULT_GRID,
) -> GridFn:
    """Approximate backward action function ``x -> h_{x0,u0}(x, t)``.

    The point datum is replaced by the steep cone ``u0 + M dist(x, x0)``.
    """
    if t < cfg.dt:
        raise ValueError("t must be at least one time step")
    k = model_constants(model)
    level = abs(model.c) + k.Lambda * abs(u0) + max(k.E0, 0.0) + 1.0
    m_pen = 100.0 * (1.0 + lipschitz_estimate(model, level))
    phi = GridFn(grid, u0 + m_pen * dist_torus(grid.nodes, x0))
    # the cone is tall by construction; divergence is judged against its height
    acfg = cfg.replace(M_div=max(cfg.M_div, abs(u0) + m_pen * math.pi + 1.0))
    with warnings.catch_warnings():
        # the cone's slopes exceed v_max on purpose
        warnings.simplefilter("ignore", RuntimeWarning)
        out, trace = evolve(model, phi, t, Direction.BACKWARD, acfg)
    if trace.diverged:
        raise DivergenceError("action function evolution diverged")
    return out


class LongTime(str, enum.Enum):
    CONVERGED = "Converged"
    DIVERGED_DOWN = "DivergedDown"
    DIVERGED_UP = "DivergedUp"
    UNDETERMINED = "Undetermined"


@dataclass
class Classification:
    kind: LongTime
    t_end: float
    solution: StationarySolution | None = None
    trace: EvolutionTrace | None = field(default=None, repr=False)
    state: GridFn | None = field(default=None, repr=False)  # last iterate

    def __str__(self) -> str:
        return self.kind.value


def classify_longtime(
    model: ContactModel,
    phi: GridFn,
    cfg: SemigroupConfig = SemigroupConfig(),
) -> Classification:
    """Run the backward semigroup until it settles, leaves ``[-M_div, M_div]`` or hits ``t_max``."""
    k, dt = _nsteps(cfg.t_max, cfg.dt)
    values, stats, status = _run(model, phi.values, phi.grid, dt, cfg, k,
                                 bound=cfg.M_div, stop_rate=cfg.tol)
    tr = _trace(stats, dt, status == 1, have_ref=False)
    t_end = float(tr.times[-1])
    last = GridFn(phi.grid, values) if np.all(np.isfinite(values)) else None
    if status == 2:
        sol = StationarySolution(last, model.c, Direction.BACKWARD, float(stats[-1, 3]), len(stats), dt)
        return Classification(LongTime.CONVERGED, t_end, sol, tr, last)
    if status == 1:
        down = not (stats[-1, 1] >= -cfg.M_div)
        return Classification(LongTime.DIVERGED_DOWN if down else LongTime.DIVERGED_UP, t_end, None, tr, last)
    return Classification(LongTime.UNDETERMINED, t_end, None, tr, last)
