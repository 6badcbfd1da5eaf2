"""Property suite run by ``hjdisc verify``.

Each check returns a :class:`PropertyResult` with the measured quantity and
the bound it is held to.  Checks that do not apply to the model are reported
as skipped rather than passed.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .characteristics import ContactState, Flow, OrbitRecord, integrate
from .grid import GridFn, PeriodicGrid, gridfn_from_csv, gridfn_to_csv, sup_distance
from .model import ContactModel, model_constants
from .rates import fit_rate
from .semigroup import (
    Direction,
    EvolutionTrace,
    SemigroupConfig,
    action_function,
    evolve,
    step_backward,
    subsolution_residual,
)


@dataclass
class PropertyResult:
    name: str
    passed: bool | None  # None when skipped
    value: float = math.nan
    bound: float = math.nan
    note: str = ""

    def to_dict(self) -> dict:
        def num(v):
            return None if not math.isfinite(v) else float(format(v, ".17g"))

        return {"name": self.name, "passed": self.passed, "value": num(self.value),
                "bound": num(self.bound), "note": self.note}


def _random_fn(grid: PeriodicGrid, rng: np.random.Generator, scale: float = 0.05) -> GridFn:
    """A rough periodic function: a mean-free random walk."""
    steps = rng.normal(size=grid.n) * scale
    steps -= steps.mean()
    w = np.cumsum(steps)
    return GridFn(grid, w - w.mean())


def check_csv_roundtrip(model, cfg, grid, rng) -> PropertyResult:
    f = _random_fn(grid, rng)
    g = gridfn_from_csv(io.StringIO(gridfn_to_csv(f)))
    same = bool(np.array_equal(f.values, g.values))
    return PropertyResult("grid.csv_roundtrip", same, float(np.abs(f.values - g.values).max()), 0.0)


def check_fenchel(model, cfg, grid, rng) -> PropertyResult:
    x = rng.uniform(0, 2 * np.pi, 64)
    p = rng.uniform(-4, 4, 64)
    v = np.asarray(model.h.dp(x, p))
    # equality at v = h_p, inequality elsewhere
    eq = np.abs(model.h.lagrangian(x, v) + model.h(x, p) - p * v)
    w = rng.uniform(-6, 6, 64)
    ineq = p * w - model.h.lagrangian(x, w) - model.h(x, p)
    val = float(max(eq.max(), ineq.max(initial=0.0)))
    return PropertyResult("model.fenchel_duality", val <= 1e-6, val, 1e-6)


def check_reflection(model, cfg, grid, rng) -> PropertyResult:
    x = rng.uniform(0, 2 * np.pi, 32)
    p = rng.uniform(-4, 4, 32)
    u = rng.uniform(-2, 2, 32)
    twice = model.reflect().reflect()
    val = float(np.abs(twice.hamiltonian(x, p, u) - model.hamiltonian(x, p, u)).max())
    return PropertyResult("model.reflection_involution", val == 0.0, val, 0.0)


def check_monotone(model, cfg, grid, rng, pairs: int = 20) -> PropertyResult:
    worst = -math.inf
    for _ in range(pairs):
        phi = _random_fn(grid, rng)
        gap = np.where(rng.random(grid.n) < 0.3, 0.0, rng.random(grid.n) * rng.choice([1e-12, 1e-3, 1.0]))
        a = step_backward(model, phi, cfg).values
        b = step_backward(model, GridFn(grid, phi.values + gap), cfg).values
        worst = max(worst, float((a - b).max()))
    return PropertyResult("semigroup.monotone", worst <= 0.0, worst, 0.0, "max of T phi - T psi for phi <= psi")


def check_order_in_c(model, cfg, grid, rng) -> PropertyResult:
    phi = _random_fn(grid, rng)
    lo = step_backward(model, phi, cfg).values
    hi = step_backward(model.with_c(model.c + 0.5), phi, cfg).values
    worst = float((lo - hi).max())
    return PropertyResult("semigroup.order_in_c", worst <= 0.0, worst, 0.0)


def check_contraction(model, cfg, grid, rng, pairs: int = 3, t_final: float = 3.0) -> PropertyResult:
    Lam = model_constants(model).Lambda
    worst = -math.inf
    for _ in range(pairs):
        phi, psi = _random_fn(grid, rng), _random_fn(grid, rng)
        d0 = sup_distance(phi, psi)
        for t in (1.0, 2.0, t_final):
            a, _ = evolve(model, phi, t, Direction.BACKWARD, cfg)
            b, _ = evolve(model, psi, t, Direction.BACKWARD, cfg)
            worst = max(worst, sup_distance(a, b) - (math.exp(Lam * t) * d0 + 5 * cfg.dt))
    return PropertyResult("semigroup.contraction", worst <= 0.0, worst, 0.0,
                          "max of |T phi - T psi| - exp(Lambda t)|phi - psi| - 5 dt")


def check_composition(model, cfg, grid, rng, t: float = 1.0) -> PropertyResult:
    phi = GridFn.from_function(grid, lambda x: np.sin(2 * x) + 0.5 * np.cos(x))
    s = round(0.3337 * t / cfg.dt) * cfg.dt
    full, _ = evolve(model, phi, t, Direction.BACKWARD, cfg)
    mid, _ = evolve(model, phi, s, Direction.BACKWARD, cfg)
    comp, _ = evolve(model, mid, t - s, Direction.BACKWARD, cfg)
    half, _ = evolve(model, phi, t, Direction.BACKWARD, cfg.replace(dt=cfg.dt / 2))
    err = sup_distance(full, half)
    val = sup_distance(full, comp)
    return PropertyResult("semigroup.composition", val <= 2 * err, val, 2 * err)


def check_duality(model, cfg, grid, rng) -> PropertyResult:
    phi = _random_fn(grid, rng)
    fwd, _ = evolve(model, phi, 0.2, Direction.FORWARD, cfg)
    back, _ = evolve(model.reflect(), -phi, 0.2, Direction.BACKWARD, cfg)
    same = bool(np.array_equal(fwd.values, -back.values))
    return PropertyResult("semigroup.forward_duality", same, sup_distance(fwd, -back), 0.0)


def check_backend_parity(model, cfg, grid, rng) -> PropertyResult:
    if len(kernels.BACKENDS) < 2:
        return PropertyResult("semigroup.backend_parity", None, note="compiled backend not built")
    phi = _random_fn(grid, rng)
    a, _ = evolve(model, phi, 0.5, Direction.BACKWARD, cfg.replace(backend="cython"))
    b, _ = evolve(model, phi, 0.5, Direction.BACKWARD, cfg.replace(backend="numpy"))
    val = sup_distance(a, b)
    return PropertyResult("semigroup.backend_parity", val <= 1e-12, val, 1e-12)


def check_subsolution_monotone(model, cfg, grid, rng, t_final: float = 2.0) -> PropertyResult:
    phi = GridFn.constant(grid, 0.0)
    if subsolution_residual(model, phi) > 0:
        return PropertyResult("semigroup.subsolution_monotone", None, note="phi = 0 is not a subsolution")
    prev, worst = phi, -math.inf
    for _ in range(4):
        nxt, _ = evolve(model, prev, t_final / 4, Direction.BACKWARD, cfg)
        worst = max(worst, float((prev.values - nxt.values).max()))
        prev = nxt
    return PropertyResult("semigroup.subsolution_monotone", worst <= 0.0, worst, 0.0,
                          "max decrease of T_t 0 between checkpoints")


def check_markov(model, cfg, grid, rng, t: float = 0.5, s: float = 0.5) -> PropertyResult:
    x0, u0 = 1.0, 0.5
    one = action_function(model, x0, u0, t + s, cfg, grid)
    mid = action_function(model, x0, u0, t, cfg, grid)
    two = np.full(grid.n, np.inf)
    for y, hy in zip(grid.nodes, mid.values):
        two = np.minimum(two, action_function(model, y, hy, s, cfg, grid).values)
    fine = action_function(model, x0, u0, t + s, cfg.replace(dt=cfg.dt / 2), grid)
    err = sup_distance(one, fine)
    val = float(np.abs(one.values - two).max())
    return PropertyResult("semigroup.markov", val <= 3 * err, val, 3 * err)


def check_rate_fit(model, cfg, grid, rng) -> PropertyResult:
    rate = float(rng.uniform(0.2, 2.0))
    t = np.linspace(0.0, 10.0 / rate, 1001)  # ends well above the saturation floor
    d = 0.3 * np.exp(-rate * t)
    tr = EvolutionTrace(t, d, d, d, d)
    val = abs(fit_rate(tr).R_hat - rate)
    return PropertyResult("rates.planted_rate", val <= 1e-10, val, 1e-10)


def check_orbit_reversible(model, cfg, grid, rng) -> PropertyResult:
    s = ContactState(float(rng.uniform(0, 2 * np.pi)), float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)))
    fwd = integrate(model, s, 1.0, 1e-3, Flow.FORWARD)
    back = integrate(model, fwd.final, 1.0, 1e-3, Flow.BACKWARD)
    val = back.final.distance(s)
    same = np.array_equal(OrbitRecord.from_csv(io.StringIO(fwd.to_csv())).p, fwd.p)
    return PropertyResult("characteristics.reversible", val <= 1e-8 and same, val, 1e-8,
                          "forward then backward RK4 over t=1; CSV round-trip")


CHECKS: dict[str, Callable[..., PropertyResult]] = {
    "grid.csv_roundtrip": check_csv_roundtrip,
    "model.fenchel_duality": check_fenchel,
    "model.reflection_involution": check_reflection,
    "semigroup.monotone": check_monotone,
    "semigroup.order_in_c": check_order_in_c,
    "semigroup.contraction": check_contraction,
    "semigroup.composition": check_composition,
    "semigroup.forward_duality": check_duality,
    "semigroup.backend_parity": check_backend_parity,
    "semigroup.subsolution_monotone": check_subsolution_monotone,
    "semigroup.markov": check_markov,
    "rates.planted_rate": check_rate_fit,
    "characteristics.reversible": check_orbit_reversible,
}


def run_checks(model: ContactModel, cfg: SemigroupConfig, grid: PeriodicGrid, seed: int = 0,
               skip: tuple[str, ...] = ()) -> list[PropertyResult]:
    unknown = set(skip) - set(CHECKS)
    if unknown:
        raise ValueError(f"unknown checks {sorted(unknown)}; known: {sorted(CHECKS)}")
    rng = np.random.default_rng(seed)
    out = []
    for name, check in CHECKS.items():
        if name in skip:
            out.append(PropertyResult(name, None, note="skipped by config"))
            continue
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = check(model, cfg, grid, rng)
        except Exception as exc:  # a crashing check is a failed check
            res = PropertyResult(name, False, note=f"{type(exc).__name__}: {exc}")
        out.append(res)
    return out
