"""Exponential convergence rates of the backward semigroup.

``fit_rate`` turns an evolution trace with a reference into a rate by a
least-squares line through ``ln dist`` over the late part of the trace.
``rate_report`` measures that rate from data ``u_- + delta`` for a list of
``c`` and sets it next to the Mather average ``a(c)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .characteristics import MatherConfig, estimate_mather_average
from .grid import PeriodicGrid, fmt
from .model import ContactModel, model_constants
from .semigroup import (
    DEFAULT_GRID,
    Direction,
    EvolutionTrace,
    SemigroupConfig,
    evolve,
    initial_upper_constant,
    lipschitz_estimate,
    solve_stationary,
)

DIST_FLOOR = 1e-12


class SaturatedWindow(ValueError):
    pass


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    window: tuple[float, float]
    fit_residual: float
    n_points: int

    @property
    def R_hat(self) -> float:
        return -self.slope


def fit_rate(trace: EvolutionTrace, window_fraction: float = 0.5, floor: float = DIST_FLOOR) -> RateFit:
    """Least-squares line through ``(t, ln dist)`` over the last ``window_fraction`` of the trace."""
    if not 0 < window_fraction <= 1:
        raise ValueError("window_fraction must lie in (0, 1]")
    t_all = np.asarray(trace.times, float)
    d_all = np.asarray(trace.dist_to_ref, float)
    if t_all.size == 0:
        raise ValueError("empty trace")
    t0 = t_all[-1] - window_fraction * (t_all[-1] - t_all[0])
    sel = t_all >= t0
    t, d = t_all[sel], d_all[sel]
    if not np.all(np.isfinite(d)):
        raise ValueError("non-finite distances in the fit window (trace has no reference?)")
    if np.any(d <= floor):
        raise SaturatedWindow("window saturated; shorten horizon")
    if t.size < 10:
        raise ValueError(f"fit window has {t.size} points; need at least 10")
    y = np.log(d)
    A = np.column_stack([t, np.ones_like(t)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ np.array([slope, intercept]) - y) ** 2)))
    return RateFit(float(slope), float(intercept), (float(t[0]), float(t[-1])), resid, int(t.size))


# ---------------------------------------------------------------------------
# report over c
# ---------------------------------------------------------------------------


@dataclass
class RateRow:
    c: float
    a_hat: float = math.nan
    R_hat: float = math.nan
    lambda_plus: float = math.nan
    fit: RateFit | None = None
    horizon: float = math.nan
    divergence_growth: float | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def gap(self) -> float:
        return abs(self.a_hat - self.R_hat)

    @property
    def ok(self) -> bool:
        return not any(f.startswith("failed") for f in self.flags)


@dataclass
class RateReport:
    rows: list[RateRow]
    flags: dict[str, bool]
    delta: float

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("c", "a_hat", "R_hat", "gap", "lambda_plus", "flags"))
        for r in self.rows:
            w.writerow((fmt(r.c), fmt(r.a_hat), fmt(r.R_hat), fmt(r.gap), fmt(r.lambda_plus),
                        ";".join(r.flags) or "ok"))
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None or not math.isfinite(v) else float(fmt(v))

        rows = []
        for r in self.rows:
            rows.append({
                "c": num(r.c), "a_hat": num(r.a_hat), "R_hat": num(r.R_hat), "gap": num(r.gap),
                "lambda_plus": num(r.lambda_plus), "horizon": num(r.horizon),
                "fit_residual": None if r.fit is None else num(r.fit.fit_residual),
                "window": None if r.fit is None else [num(v) for v in r.fit.window],
                "divergence_growth": num(r.divergence_growth),
                "flags": list(r.flags),
            })
        return {"delta": self.delta, "rows": rows, "flags": dict(self.flags)}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def scaled_config(model: ContactModel, cfg: SemigroupConfig) -> SemigroupConfig:
    """Widen ``M_div`` and ``v_max`` to the size of the problem at this ``c``.

    Solutions grow roughly like ``c / lambda_+`` and their slopes like
    ``sqrt(c)``, so the defaults that suit ``c ~ 1`` are too tight for large ``c``.
    """
    top = abs(initial_upper_constant(model))
    k = model_constants(model)
    level = abs(model.c) + k.Lambda * 2.0 * top + max(k.E0, 0.0) + 1.0
    v = 1.25 * lipschitz_estimate(model, level)
    v_need = float(np.abs(model.h.dp(np.array([0.0, 0.0]), np.array([-v, v]))).max()) if v > 0 else 0.0
    return cfg.replace(M_div=max(cfg.M_div, 4.0 * top), v_max=max(cfg.v_max, min(v_need, 60.0)))


def rate_horizon(a_hat: float, delta: float, dt: float, target: float = 1e-6, t_cap: float = 200.0) -> float:
    """Time for ``delta exp(-a t)`` to reach ``target``, rounded up to whole steps.

    Whole steps matter: the reference is the fixed point of the scheme at
    step ``dt``, and a rescaled step would converge to a slightly different one.
    """
    t = min(t_cap, math.log(delta / target) / max(a_hat, 0.05))
    return math.ceil(t / dt) * dt


def rate_report(
    model_family: ContactModel | Callable[[float], ContactModel],
    c_list: Sequence[float],
    cfg: SemigroupConfig | None = None,
    delta: float = 0.3,
    grid: PeriodicGrid = DEFAULT_GRID,
    mather: MatherConfig | None = None,
    asymptote_tol: float = 0.02,
    monotone_tol: float = 0.01,
    ref_tol: float = 1e-11,
    divergence_check: bool = False,
) -> RateReport:
    """For each ``c``: solve ``u_-``, estimate ``a(c)``, and fit the rate of ``u_- + delta``.

    The reference stationary solution is solved to ``ref_tol`` so that the
    measured distance decays well below the fit window.  Summary flags test
    that the rates are nondecreasing in ``c`` (up to ``monotone_tol``) and
    that the last row is within ``asymptote_tol`` of ``lambda_+``.
    """
    cfg = cfg or SemigroupConfig()
    family = model_family.with_c if isinstance(model_family, ContactModel) else model_family
    rows = []
    for c in c_list:
        row = RateRow(float(c))
        rows.append(row)
        try:
            m = family(float(c))
            row.lambda_plus = model_constants(m).lambda_plus
            rcfg = scaled_config(m, cfg)
            # the change rate cannot drop below roundoff of |u| per step
            floor = 64 * np.finfo(float).eps * abs(initial_upper_constant(m)) / rcfg.dt
            sol = solve_stationary(m, Direction.BACKWARD, rcfg.replace(tol=max(min(rcfg.tol, ref_tol), floor)), grid)
            est = estimate_mather_average(m, sol, mather)
            row.a_hat = est.a_hat
            row.horizon = rate_horizon(est.a_hat, delta, rcfg.dt)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", RuntimeWarning)
                _, tr = evolve(m, sol.u + delta, row.horizon, Direction.BACKWARD, rcfg, reference=sol.u)
            if caught:
                row.flags.append("velocity_window")
            row.fit = fit_rate(tr)
            row.R_hat = row.fit.R_hat
            if divergence_check:
                row.divergence_growth = _divergence_growth(m, rcfg, grid, delta, sol)
                if row.divergence_growth < 0:
                    row.flags.append("divergence_not_growing")
        except Exception as exc:  # a failed row is reported, not fatal
            row.flags.append(f"failed: {type(exc).__name__}: {exc}")
    good = [r for r in rows if r.ok]
    R = [r.R_hat for r in good]
    A = [r.a_hat for r in good]
    flags = {
        "monotone_nondecreasing_R": bool(all(b >= a - monotone_tol for a, b in zip(R, R[1:]))),
        "monotone_nondecreasing_a": bool(all(b >= a - monotone_tol for a, b in zip(A, A[1:]))),
        "approaching_lambda_plus": bool(good) and abs(good[-1].a_hat - good[-1].lambda_plus) <= asymptote_tol,
        "all_rows_ok": len(good) == len(rows),
    }
    return RateReport(rows, flags, float(delta))


def _divergence_growth(m, cfg, grid, delta, u_minus) -> float:
    """Slope of ``ln dist(T_t phi, u_-)`` for ``phi = v_+ - delta``; nonnegative when it runs away."""
    v_plus = solve_stationary(m, Direction.FORWARD, cfg, grid)
    with warnings.catch_warnings():
        # runaway data steepen until they hit the velocity window; expected here
        warnings.simplefilter("ignore", RuntimeWarning)
        _, tr = evolve(m, v_plus.u - delta, 20.0, Direction.BACKWARD, cfg, reference=u_minus.u)
    return -fit_rate(tr).R_hat
