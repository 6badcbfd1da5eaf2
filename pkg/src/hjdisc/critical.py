"""Critical values: behavioral bisection, Mañé values and the zero-set formula.

``bisect_critical`` locates the solvability threshold c0 of
``lambda u + h(x, du) = c`` by classifying the long-time behavior of the
backward semigroup from a large constant: below c0 it runs off to -infinity,
above c0 it settles.  For ``lambda >= 0`` with isolated zeros,
``nonneg_critical`` evaluates ``max min_p h(x*, p)`` over the zeros ``x*`` and
cross-checks it against the limit of Mañé values of ``h + a lambda`` as
``a -> -infinity``.
"""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grid import GridFn, PeriodicGrid
from .model import ContactModel, DiscountSpec, HamiltonianKind, HamiltonianSpec, SignClass, model_constants
from .semigroup import (
    DEFAULT_GRID,
    Direction,
    LongTime,
    SemigroupConfig,
    classify_longtime,
    evolve,
    initial_upper_constant,
    lipschitz_estimate,
)

A_SCAN = (-1.0, -4.0, -16.0, -64.0)


class CriticalMethod(str, enum.Enum):
    BISECTION = "Bisection"
    NONNEG_FORMULA = "NonNegFormula"
    MANE_LIMIT = "ManeLimit"


class BracketError(ValueError):
    pass


class UndeterminedProbe(RuntimeError):
    def __init__(self, message: str, probes):
        super().__init__(message)
        self.probes = probes


@dataclass(frozen=True)
class Probe:
    c: float
    kind: LongTime
    t_end: float


@dataclass
class CriticalReport:
    c0: float  # -inf when no finite critical value exists
    method: CriticalMethod
    bracket: tuple[float, float] | None = None
    probes: list[Probe] = field(default_factory=list)
    cross_check: dict | None = None

    def to_dict(self) -> dict:
        return {
            "c0": _num(self.c0),
            "method": self.method.value,
            "bracket": None if self.bracket is None else [_num(b) for b in self.bracket],
            "probes": [{"c": _num(p.c), "class": p.kind.value, "t_end": _num(p.t_end)} for p in self.probes],
            "cross_check": self.cross_check,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def _num(v):
    """JSON-safe float; infinities become the strings ``"inf"``/``"-inf"``."""
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(format(v, ".17g"))


# ---------------------------------------------------------------------------
# bisection
# ---------------------------------------------------------------------------


def _family(model_family) -> Callable[[float], ContactModel]:
    if isinstance(model_family, ContactModel):
        return model_family.with_c
    return model_family


def _classify(family, c, cfg, grid, t_cap) -> Probe:
    """Classify from the upper constant, extending by ``cfg.t_max`` windows up to ``t_cap``."""
    m = family(c)
    phi = GridFn.constant(grid, initial_upper_constant(m))
    t = 0.0
    while True:
        r = classify_longtime(m, phi, cfg)
        t += r.t_end
        if r.kind is not LongTime.UNDETERMINED or t >= t_cap - 1e-9:
            return Probe(float(c), r.kind, t)
        phi = r.state


def bisect_critical(
    model_family: ContactModel | Callable[[float], ContactModel],
    bracket: tuple[float, float] = (-1.0, 1.0),
    tol_c: float = 0.02,
    cfg: SemigroupConfig | None = None,
    grid: PeriodicGrid = DEFAULT_GRID,
    probe_tol: float | None = None,
    t_cap: float | None = None,
) -> CriticalReport:
    """Bisection on the DivergedDown/Converged boundary in ``c``.

    Each probe starts from the constant above all subsolutions.  Probes stop
    once the change rate falls below ``probe_tol`` (default ``tol_c / 100``):
    near c0 the approach to the stationary solution is slow, and a drift that
    small cannot move the answer by more than the requested tolerance.  An
    undecided probe keeps running in ``cfg.t_max`` windows until ``t_cap``
    (default ``20 * cfg.t_max``).
    """
    lo, hi = map(float, bracket)
    if not lo < hi:
        raise ValueError("bracket must satisfy c_lo < c_hi")
    if not tol_c > 0:
        raise ValueError("tol_c must be positive")
    cfg = cfg or SemigroupConfig()
    cfg = cfg.replace(tol=probe_tol if probe_tol is not None else tol_c / 100.0)
    t_cap = 20.0 * cfg.t_max if t_cap is None else float(t_cap)
    family = _family(model_family)
    probes: list[Probe] = []

    def probe(c):
        p = _classify(family, c, cfg, grid, t_cap)
        probes.append(p)
        return p.kind

    if probe(lo) is not LongTime.DIVERGED_DOWN or probe(hi) is not LongTime.CONVERGED:
        raise BracketError(
            "bracket does not straddle c0: "
            + ", ".join(f"c={p.c:g} -> {p.kind.value}" for p in probes)
        )
    while hi - lo > tol_c:
        mid = 0.5 * (lo + hi)
        kind = probe(mid)
        if kind is LongTime.UNDETERMINED:
            mid = mid + tol_c / 10.0
            kind = probe(mid)
        if kind is LongTime.DIVERGED_DOWN:
            lo = mid
        elif kind is LongTime.CONVERGED:
            hi = mid
        else:
            raise UndeterminedProbe(
                f"probe at c={mid:g} is {kind.value} after t={t_cap:g}; increase t_cap", probes
            )
    _check_monotone(probes)
    return CriticalReport(0.5 * (lo + hi), CriticalMethod.BISECTION, (lo, hi), probes)


def _check_monotone(probes: Sequence[Probe]) -> None:
    decided = sorted((p for p in probes if p.kind in (LongTime.CONVERGED, LongTime.DIVERGED_DOWN)),
                     key=lambda p: p.c)
    seen_converged = False
    for p in decided:
        if p.kind is LongTime.CONVERGED:
            seen_converged = True
        elif seen_converged:
            raise RuntimeError(f"classification not monotone in c (DivergedDown at c={p.c:g} above a Converged probe)")


# ---------------------------------------------------------------------------
# Mañé critical value
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManeFit:
    value: float
    fit_residual: float
    horizon: float


def mane_fit(
    h: HamiltonianSpec,
    cfg: SemigroupConfig | None = None,
    grid: PeriodicGrid = DEFAULT_GRID,
    horizon: float = 100.0,
    residual_warn: float = 1e-3,
) -> ManeFit:
    """Negative late-time slope of the undiscounted backward semigroup from 0.

    The slope is the mean of the least-squares slopes of the running minimum
    and maximum over the second half of ``[0, horizon]``.
    """
    cfg = cfg or SemigroupConfig()
    model = ContactModel(h, DiscountSpec.constant(0.0), 0.0)
    # the value c(h) <= max h(x, 0), so slopes stay where h <= max h(x, 0)
    x = grid.nodes
    p_bound = lipschitz_estimate(model, float(np.max(h(x, np.zeros_like(x)))) + 1.0)
    v_need = 1.25 * _max_velocity(h, p_bound)
    run_cfg = cfg.replace(v_max=max(cfg.v_max, v_need))
    _, tr = evolve(model, GridFn.constant(grid, 0.0), horizon, Direction.BACKWARD, run_cfg)
    half = tr.times >= 0.5 * tr.times[-1]
    t = tr.times[half]
    slopes, resid = [], 0.0
    for series in (tr.min_val[half], tr.max_val[half]):
        coef = np.polyfit(t, series, 1)
        slopes.append(coef[0])
        resid = max(resid, float(np.sqrt(np.mean((np.polyval(coef, t) - series) ** 2))))
    value = -float(np.mean(slopes))
    if resid > residual_warn:
        warnings.warn(f"value drift is not linear (fit residual {resid:.2g})", RuntimeWarning, stacklevel=2)
    return ManeFit(value, resid, horizon)


def mane_value(h: HamiltonianSpec, cfg: SemigroupConfig | None = None, **kw) -> float:
    """Mañé critical value of ``h`` from the ergodic slope."""
    return mane_fit(h, cfg, **kw).value


def _max_velocity(h: HamiltonianSpec, p_bound: float) -> float:
    x = PeriodicGrid(256).nodes
    p = np.array([-p_bound, p_bound])
    return float(np.abs(h.dp(x[:, None], p[None, :])).max())


# ---------------------------------------------------------------------------
# non-negative discount factors
# ---------------------------------------------------------------------------


def zero_clusters(lam: DiscountSpec, grid: PeriodicGrid, zero_tol: float) -> list[np.ndarray]:
    """Runs of consecutive nodes with ``|lambda| < zero_tol``, wrapping at 2 pi."""
    small = np.abs(lam(grid.nodes)) < zero_tol
    if small.all():
        return [np.arange(grid.n)]
    if not small.any():
        return []
    start = int(np.argmin(small))  # a node outside every cluster
    order = (start + np.arange(grid.n)) % grid.n
    clusters, cur = [], []
    for i in order:
        if small[i]:
            cur.append(i)
        elif cur:
            clusters.append(np.array(cur))
            cur = []
    if cur:
        clusters.append(np.array(cur))
    return clusters


def _fit_limit(a_values, c_values) -> tuple[float, float]:
    """Fit ``c(a) = c_inf + K/|a|`` and return ``(c_inf, K)``."""
    A = np.column_stack([np.ones(len(a_values)), 1.0 / np.abs(np.asarray(a_values, float))])
    (c_inf, k), *_ = np.linalg.lstsq(A, np.asarray(c_values, float), rcond=None)
    return float(c_inf), float(k)


def mane_limit(
    model: ContactModel,
    a_values: Sequence[float] = A_SCAN,
    cfg: SemigroupConfig | None = None,
    grid: PeriodicGrid = DEFAULT_GRID,
) -> dict:
    """``c(h + a lambda)`` over ``a_values`` and its extrapolation to ``a -> -inf``."""
    if any(a >= 0 for a in a_values):
        raise ValueError("a-scan values must be negative")
    cs = []
    for a in a_values:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            cs.append(mane_value(model.h.plus_potential(a, model.lam), cfg, grid=grid))
    c_inf, k = _fit_limit(a_values, cs)
    return {"a": [float(a) for a in a_values], "mane": [_num(v) for v in cs], "limit": _num(c_inf), "coef": _num(k)}


def nonneg_critical(
    model: ContactModel,
    cfg: SemigroupConfig | None = None,
    grid: PeriodicGrid = DEFAULT_GRID,
    zero_tol: float | None = None,
    a_values: Sequence[float] = A_SCAN,
    cross_check: bool = True,
) -> CriticalReport:
    """c0 for ``lambda >= 0`` from its zero set.

    With isolated zeros ``x*`` the answer is ``max -l(x*, 0)``; clusters wider
    than 5 nodes fall back to the Mañé-limit scan.  No zeros means no finite
    critical value and the report carries ``-inf``.
    """
    k = model_constants(model)
    if k.sign_class is not SignClass.PLUS:
        raise ValueError(f"nonneg_critical needs lambda >= 0 with max lambda > 0 (got {k.sign_class.value})")
    if zero_tol is None:
        zero_tol = 1e-4 if model.lam.kind.value == "tabulated" else 1e-8
    clusters = zero_clusters(model.lam, grid, zero_tol)
    if not clusters:
        return CriticalReport(-math.inf, CriticalMethod.NONNEG_FORMULA, cross_check={"zero_set": []})
    x = grid.nodes
    if any(len(cl) > 5 for cl in clusters):
        scan = mane_limit(model, a_values, cfg, grid)
        scan["reason"] = "zero set not isolated"
        return CriticalReport(float(scan["limit"]), CriticalMethod.MANE_LIMIT, cross_check=scan)
    centers = []
    for cl in clusters:
        lam_c = np.abs(model.lam(x[cl]))
        centers.append(float(x[cl][np.argmin(lam_c)]))
    values = [0.0 - float(model.lagrangian(xc, 0.0)) for xc in centers]
    c0 = max(values)
    check = {"zero_set": [_num(v) for v in centers], "per_zero": [_num(v) for v in values]}
    if cross_check:
        scan = mane_limit(model, a_values, cfg, grid)
        check.update(scan)
        check["gap"] = _num(abs(c0 - float(scan["limit"])))
    return CriticalReport(c0, CriticalMethod.NONNEG_FORMULA, cross_check=check)
