"""Contact characteristics: orbits, fixed points, Mather averages.

The characteristic field of ``H(x, p, u) = lambda(x) u + h(x, p) - c`` is

    x' = h_p,   p' = -lambda'(x) u - h_x - lambda(x) p,   u' = p h_p - h - lambda(x) u + c.

Orbits are integrated with classical RK4; many seeds are advanced together as
one vectorized state.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridFn, fmt, gradient, interpolate, second_difference
from .model import ContactModel, wrap
from .semigroup import StationarySolution, subsolution_residual

ESCAPE_NORM = 1e6
JAC_STEP = 1e-6
SVD_CUTOFF = 1e-3  # relative; directions this flat are treated as null


class Flow(str, enum.Enum):
    FORWARD = "Forward"
    BACKWARD = "Backward"


class FixedPointError(RuntimeError):
    def __init__(self, message: str, residual: float, state: "ContactState"):
        super().__init__(message)
        self.residual = residual
        self.state = state


@dataclass(frozen=True)
class ContactState:
    x: float
    p: float
    u: float

    def __post_init__(self):
        vals = (float(self.x), float(self.p), float(self.u))
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("contact state must be finite")
        object.__setattr__(self, "x", float(wrap(vals[0])))
        object.__setattr__(self, "p", vals[1])
        object.__setattr__(self, "u", vals[2])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.p, self.u])

    def distance(self, other: "ContactState") -> float:
        dx = abs(wrap(self.x - other.x))
        dx = min(dx, 2 * math.pi - dx)
        return max(dx, abs(self.p - other.p), abs(self.u - other.u))


@dataclass
class OrbitRecord:
    times: np.ndarray
    x: np.ndarray  # wrapped to [0, 2 pi)
    p: np.ndarray
    u: np.ndarray
    lambda_avg: np.ndarray
    escaped: bool = False

    def __len__(self) -> int:
        return self.times.size

    @property
    def states(self) -> list[ContactState]:
        return [ContactState(*s) for s in zip(self.x, self.p, self.u)]

    @property
    def final(self) -> ContactState:
        return ContactState(self.x[-1], self.p[-1], self.u[-1])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("t", "x", "p", "u", "lambda_avg"))
        for row in zip(self.times, self.x, self.p, self.u, self.lambda_avg):
            w.writerow(tuple(fmt(v) for v in row))
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "OrbitRecord":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(*(data[:, k].copy() for k in range(5)))


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------


def _field(model: ContactModel, y: np.ndarray, sign: float) -> np.ndarray:
    xd, pd, ud = model.characteristic_field(y[..., 0], y[..., 1], y[..., 2])
    return sign * np.stack([xd, pd, ud], axis=-1)


def _integrate_batch(model, y0, t_final, dt, direction, record_every=1):
    """RK4 for a batch of states ``y0`` of shape (k, 3).

    Returns times (m,), states (m, k, 3), running lambda averages (m, k) and
    escape flags (k,).  Escaped rows are frozen at their last finite state.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not t_final > 0:
        raise ValueError("t_final must be positive")
    sign = 1.0 if Flow(direction) is Flow.FORWARD else -1.0
    nsteps = max(1, int(math.ceil(t_final / dt - 1e-9)))
    h = t_final / nsteps
    y = np.array(y0, dtype=float, copy=True)
    k = y.shape[0]
    nrec = nsteps // record_every + 1
    times = np.empty(nrec)
    states = np.empty((nrec, k, 3))
    avgs = np.empty((nrec, k))
    escaped = np.zeros(k, dtype=bool)
    lam_prev = model.lam(y[:, 0])
    integral = np.zeros(k)
    times[0], states[0], avgs[0] = 0.0, y, lam_prev
    r = 1
    for step in range(1, nsteps + 1):
        k1 = _field(model, y, sign)
        k2 = _field(model, y + 0.5 * h * k1, sign)
        k3 = _field(model, y + 0.5 * h * k2, sign)
        k4 = _field(model, y + h * k3, sign)
        ynew = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        bad = ~np.all(np.isfinite(ynew), axis=1) | (np.linalg.norm(ynew, axis=1) > ESCAPE_NORM)
        escaped |= bad
        ynew[escaped] = y[escaped]
        lam_new = model.lam(ynew[:, 0])
        integral += 0.5 * h * (lam_prev + lam_new)
        y, lam_prev = ynew, lam_new
        if step % record_every == 0:
            times[r] = step * h
            states[r] = y
            avgs[r] = integral / (step * h)
            r += 1
    return times[:r], states[:r], avgs[:r], escaped


def integrate(
    model: ContactModel,
    s: ContactState,
    t_final: float,
    dt: float = 1e-3,
    direction: Flow | str = Flow.FORWARD,
    record_every: int = 1,
) -> OrbitRecord:
    """RK4 orbit of the characteristic field; Backward integrates the negated field."""
    times, states, avgs, esc = _integrate_batch(model, s.as_array()[None, :], t_final, dt, direction, record_every)
    return OrbitRecord(times, wrap(states[:, 0, 0]), states[:, 0, 1].copy(), states[:, 0, 2].copy(),
                       avgs[:, 0].copy(), bool(esc[0]))


def field_residual(model: ContactModel, s: ContactState) -> float:
    return float(np.max(np.abs(_field(model, s.as_array(), 1.0))))


def _newton(F, y, tol, max_iter, rcond):
    fy = F(y)
    for _ in range(max_iter):
        res = float(np.max(np.abs(fy)))
        if res < tol:
            break
        J = np.empty((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = JAC_STEP
            J[:, j] = (F(y + e) - F(y - e)) / (2 * JAC_STEP)
        delta, *_ = np.linalg.lstsq(J, -fy, rcond=rcond)
        # halve the step while it does not reduce the residual
        t = 1.0
        while t > 1e-4:
            trial = y + t * delta
            ft = F(trial)
            if np.all(np.isfinite(ft)) and np.max(np.abs(ft)) < res:
                break
            t *= 0.5
        if not np.all(np.isfinite(ft)):
            break
        y, fy = trial, ft
    return y, float(np.max(np.abs(fy)))


def find_fixed_point(model: ContactModel, seed: ContactState, tol: float = 1e-12, max_iter: int = 100) -> ContactState:
    """Newton's method on the characteristic field with a central-difference Jacobian.

    Steps are minimum-norm least squares.  The first pass drops singular
    values below ``SVD_CUTOFF`` times the largest, so along a (near-)continuum
    of fixed points the iterate does not slide along the flat direction.  If
    that stalls (an isolated but degenerate zero) a second pass keeps every
    direction.
    """

    def F(z):
        return _field(model, z, 1.0)

    y0 = seed.as_array()
    y, res = _newton(F, y0, tol, max_iter, SVD_CUTOFF)
    if not res < tol:
        y, res = _newton(F, y0, tol, max_iter, None)
    if res < tol:
        return ContactState(*y)
    raise FixedPointError(f"Newton did not converge in {max_iter} iterations (residual {res:.3g})",
                          res, ContactState(*y))


# ---------------------------------------------------------------------------
# calibration and Mather averages
# ---------------------------------------------------------------------------


def calibration_error(u_minus: StationarySolution | GridFn, orbit: OrbitRecord) -> float:
    """``max_t |u(t) - u_minus(x(t))|`` over the recorded times."""
    u = u_minus.u if isinstance(u_minus, StationarySolution) else u_minus
    return float(np.max(np.abs(orbit.u - interpolate(u, orbit.x))))


@dataclass
class MatherConfig:
    t_final: float = 50.0
    dt: float = 1e-3
    stride: int = 8
    kink_factor: float = 10.0
    escape_tol: float = 0.1
    newton_tol: float = 1e-14
    record_every: int = 10
    alpha_time: float = 500.0  # backward flow along the graph
    alpha_dt: float = 0.05
    reach_tol: float = 0.05  # Newton may move this far from the flow's end point


@dataclass
class SeedResult:
    index: int
    seed: ContactState
    average: float
    escaped: bool
    calibration_error: float


@dataclass
class FixedPointRecord:
    state: ContactState
    lam: float
    seed_index: int
    graph_gap: float


@dataclass
class MatherEstimate:
    a_hat: float
    per_seed: list[SeedResult]
    fixed_points: list[FixedPointRecord]
    rejected_fixed_points: list[FixedPointRecord] = field(default_factory=list)
    discarded_kinks: list[int] = field(default_factory=list)
    source: str = ""  # "seed <i>" or "fixed point <i>"

    def to_dict(self) -> dict:
        return {
            "a_hat": float(fmt(self.a_hat)),
            "source": self.source,
            "seeds": [
                {"x0": s.seed.x, "p0": s.seed.p, "u0": s.seed.u, "avg": s.average, "escaped": s.escaped,
                 "calibration_error": s.calibration_error}
                for s in self.per_seed
            ],
            "fixed_points": [
                {"x": f.state.x, "p": f.state.p, "u": f.state.u, "lambda": f.lam, "seed": f.seed_index}
                for f in self.fixed_points
            ],
            "rejected_fixed_points": [
                {"x": f.state.x, "p": f.state.p, "u": f.state.u, "lambda": f.lam, "graph_gap": f.graph_gap}
                for f in self.rejected_fixed_points
            ],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def graph_seeds(u: GridFn, stride: int = 8, kink_factor: float = 10.0) -> tuple[list[int], list[int]]:
    """Node indices to seed from, and the kink nodes left out."""
    d2 = np.abs(second_difference(u).values)
    thresh = kink_factor * float(np.median(d2))
    idx = np.arange(0, u.grid.n, stride)
    kinks = [int(i) for i in idx if d2[i] > thresh]
    keep = [int(i) for i in idx if d2[i] <= thresh]
    return keep, kinks


def _graph_gap(u: GridFn, du: GridFn, s: ContactState) -> float:
    return max(abs(s.u - interpolate(u, s.x)), abs(s.p - interpolate(du, s.x)))


def graph_alpha_limits(model: ContactModel, u: GridFn, x0, t_final: float = 500.0, dt: float = 0.05) -> np.ndarray:
    """End points of the backward flow ``x' = -h_p(x, Du(x))`` along the graph of ``u``.

    On the 1-graph of a backward solution the characteristic system reduces to
    this scalar flow; its long-time end points approximate the alpha-limits of
    the graph points ``x0``.
    """
    du = gradient(u)

    def f(x):
        return -model.h.dp(x, interpolate(du, x))

    x = np.array(x0, dtype=float)
    for _ in range(max(1, int(math.ceil(t_final / dt)))):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = wrap(x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
    return x


def estimate_mather_average(
    model: ContactModel,
    u_minus: StationarySolution,
    cfg: MatherConfig | None = None,
) -> MatherEstimate:
    """Estimate ``a(c) = inf over invariant measures on the 1-graph of int lambda``.

    Seeds are graph points ``(x_i, Du_i, u_i)`` away from kinks.  Each seed
    contributes its forward Birkhoff average of ``lambda`` unless the orbit
    leaves the graph by more than ``escape_tol``.  Each seed is also followed
    backward along the graph (where the graph is invariant) to its limit
    point; Newton refines that point, and the fixed point contributes
    ``lambda(x*)`` when it lies within ``reach_tol`` of where the flow ended.
    """
    cfg = cfg or MatherConfig()
    u = u_minus.u
    du = gradient(u)
    keep, kinks = graph_seeds(u, cfg.stride, cfg.kink_factor)
    x = u.grid.nodes
    seeds = [ContactState(x[i], du.values[i], u.values[i]) for i in keep]
    per_seed: list[SeedResult] = []
    accepted: list[FixedPointRecord] = []
    rejected: list[FixedPointRecord] = []
    if seeds:
        y0 = np.array([s.as_array() for s in seeds])
        _, states, avgs, esc = _integrate_batch(model, y0, cfg.t_final, cfg.dt, Flow.FORWARD, cfg.record_every)
        for j, (i, s) in enumerate(zip(keep, seeds)):
            cal = float(np.max(np.abs(states[:, j, 2] - interpolate(u, states[:, j, 0]))))
            per_seed.append(SeedResult(i, s, float(avgs[-1, j]), bool(esc[j]) or cal > cfg.escape_tol, cal))

        ends = graph_alpha_limits(model, u, x[keep], cfg.alpha_time, cfg.alpha_dt)
        for i, xe in zip(keep, ends):
            start = ContactState(xe, interpolate(du, xe), interpolate(u, xe))
            try:
                fp = find_fixed_point(model, start, cfg.newton_tol)
            except FixedPointError:
                continue
            rec = FixedPointRecord(fp, float(model.lam(fp.x)), i, _graph_gap(u, du, fp))
            pool = accepted if fp.distance(start) <= cfg.reach_tol else rejected
            if all(fp.distance(o.state) > 1e-6 for o in pool):
                pool.append(rec)

    candidates = [(r.average, r.index, f"seed {r.index}") for r in per_seed if not r.escaped]
    candidates += [(f.lam, f.seed_index, f"fixed point from seed {f.seed_index}") for f in accepted]
    if not candidates:
        raise RuntimeError("no invariant sample found")
    a_hat, _, source = min(candidates, key=lambda t: (t[0], t[1]))
    return MatherEstimate(float(a_hat), per_seed, accepted, rejected, kinks, source)


# ---------------------------------------------------------------------------
# Lyapunov test function
# ---------------------------------------------------------------------------


def _lyapunov_terms(model: ContactModel, psi: GridFn, jets):
    xs = np.array([j.x for j in jets])
    ps = np.array([j.p for j in jets])
    us = np.array([j.u for j in jets])
    psi_x = interpolate(psi, xs)
    gap = us - psi_x
    if np.any(gap <= 1e-9):
        raise ValueError("test function undefined: u <= psi at a jet")
    dpsi = interpolate(gradient(psi), xs)
    hp = model.h.dp(xs, ps)
    hv = model.h(xs, ps)
    lam = model.lam(xs)
    num = model.c - lam * psi_x - dpsi * hp - (hv - ps * hp)
    return num / gap, gap


def lyapunov_margin(model: ContactModel, psi: GridFn, jets) -> float:
    """``min over jets of lambda + L G`` with ``G = ln(u - psi(x))``.

    ``L`` is the derivative along the characteristic flow, and
    ``lambda + L G = (c - lambda psi - <dpsi, h_p> - (h - <p, h_p>)) / (u - psi)``.
    ``psi`` must be a strict subsolution.
    """
    if not jets:
        raise ValueError("no jets given")
    c_prime = model.c + subsolution_residual(model, psi)
    if not c_prime < model.c:
        raise ValueError(f"psi is not a strict subsolution (its level {c_prime:g} is not below c={model.c:g})")
    vals, _ = _lyapunov_terms(model, psi, jets)
    return float(np.min(vals))


def lyapunov_lower_bound(model: ContactModel, psi: GridFn, jets) -> float:
    """``(c - c') / max(u - psi)`` where ``c'`` is the subsolution level of ``psi``."""
    c_prime = model.c + subsolution_residual(model, psi)
    _, gap = _lyapunov_terms(model, psi, jets)
    return float((model.c - c_prime) / np.max(gap))


def graph_jets(u: GridFn, stride: int = 1) -> list[ContactState]:
    du = gradient(u)
    x = u.grid.nodes
    return [ContactState(x[i], du.values[i], u.values[i]) for i in range(0, u.grid.n, stride)]
