"""Pure-NumPy semi-Lagrangian kernels.

Same contract as the compiled ``_slcore`` module; used when the extension is
not built or ``HJDISC_PURE_PYTHON=1`` is set.

Every kernel computes, for each node ``i``,

    min_v  decay[i] * f(x_i - v dt) + weight[i] * (l(x_i, v) + c),   |v| <= v_max

with ``f`` linearly interpolated; ``decay = exp(-lambda dt)`` and
``weight = (1 - decay) / lambda`` (``dt`` where lambda vanishes).  ``l`` is either quadratic in ``v``
(``l = q2 v^2 + q1[i] v + q0[i]``, mode 0) or piecewise linear on a uniform
velocity table ``vtab`` with rows ``ltab[i]`` (mode 1).

``method=0`` minimizes exactly: between consecutive foot-point nodes the
objective is (linear) + (convex in v), so each piece has a closed-form or
breakpoint minimizer.  In mode 0 the closed-form foot point is snapped to a
fixed lattice of ``LATTICE`` points per cell (its neighbours are scanned),
which keeps the candidate set independent of ``f`` and the step exactly
monotone in floating point.  ``method=1`` is a coarse scan over ``n_v`` velocities
followed by golden-section refinement around the best sample.
"""

from __future__ import annotations

import math

import numpy as np

INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
BACKEND = "numpy"
# foot positions are restricted to multiples of 1/LATTICE of a cell
LATTICE = 65536.0


def _foot(f, idx, d):
    n = f.shape[0]
    s = idx + d
    j = np.floor(s)
    w = s - j
    j = j.astype(np.intp) % n
    return (1.0 - w) * f[j] + w * f[(j + 1) % n]


def _table_l(vtab, ltab, v):
    m = vtab.shape[0]
    dv = (vtab[m - 1] - vtab[0]) / (m - 1)
    s = np.clip((v - vtab[0]) / dv, 0.0, m - 1.0)
    k = np.minimum(np.floor(s).astype(np.intp), m - 2)
    w = s - k
    rows = np.arange(ltab.shape[0])
    return (1.0 - w) * ltab[rows, k] + w * ltab[rows, k + 1]


def _table_candidates(vtab, v_max, kappa, r):
    """Breakpoints of the piecewise-linear objective: table nodes and foot nodes."""
    k = np.arange(-math.floor(r), math.floor(r) + 1)
    c = np.concatenate([vtab[np.abs(vtab) <= v_max], -kappa * k, [-v_max, v_max]])
    return np.unique(c)


def _objective(f, idx, decay, weight, c, kappa, mode, q2, q1, q0, vtab, ltab, v):
    if mode == 0:
        lag = (q2 * v + q1) * v + q0
    else:
        lag = _table_l(vtab, ltab, v)
    return decay * _foot(f, idx, -v / kappa) + weight * (lag + c)


def _quadratic(f, decay, weight, dt, c, dx, v_max, q2, q1, q0):
    n = f.shape[0]
    kappa = dx / dt
    r = v_max / kappa
    inv2a = 1.0 / (2.0 * q2 * kappa * kappa * weight)
    best = np.full(n, np.inf)
    vbest = np.zeros(n)
    base = np.arange(n)
    for m in range(math.floor(-r), math.ceil(r)):
        d_lo, d_hi = (m if m > -r else -r), ((m + 1) if (m + 1) < r else r)
        if d_hi < d_lo:
            continue
        ja = (base + m) % n
        a = f[ja]
        b = f[(ja + 1) % n]
        d = np.clip((q1 * kappa * weight - decay * (b - a)) * inv2a, d_lo, d_hi)
        # snap to a fixed sub-cell lattice so the candidate set does not depend on f;
        # neighbours of the optimum cover rounding in d
        k0 = np.floor((d - m) * LATTICE) - 1
        for k in range(4):
            w = np.clip((k0 + k) * (1.0 / LATTICE), d_lo - m, d_hi - m)
            v = -kappa * (m + w)
            # convex form: monotone in (a, b) under rounding
            val = decay * ((1.0 - w) * a + w * b) + weight * ((q2 * v + q1) * v + q0 + c)
            better = val < best
            best = np.where(better, val, best)
            vbest = np.where(better, v, vbest)
    return best, vbest


def _candidates(f, decay, weight, dt, c, dx, v_max, vtab, ltab):
    n = f.shape[0]
    idx = np.arange(n, dtype=float)
    kappa = dx / dt
    best = np.full(n, np.inf)
    vbest = np.zeros(n)
    for v in _table_candidates(vtab, v_max, kappa, v_max / kappa):
        val = _objective(f, idx, decay, weight, c, kappa, 1, 0.0, 0.0, 0.0, vtab, ltab, np.full(n, v))
        better = val < best
        best = np.where(better, val, best)
        vbest = np.where(better, v, vbest)
    return best, vbest


def _golden(f, decay, weight, dt, c, dx, v_max, mode, q2, q1, q0, vtab, ltab, n_v, refine_iters):
    n = f.shape[0]
    idx = np.arange(n, dtype=float)
    kappa = dx / dt

    def obj(v):
        return _objective(f, idx, decay, weight, c, kappa, mode, q2, q1, q0, vtab, ltab, v)

    coarse = np.linspace(-v_max, v_max, max(n_v, 2))
    n_v = coarse.size
    best = np.full(n, np.inf)
    k = np.zeros(n, dtype=np.intp)
    for j, v in enumerate(coarse):
        val = obj(np.full(n, v))
        better = val < best
        best = np.where(better, val, best)
        k = np.where(better, j, k)
    vbest = coarse[k]
    a = coarse[np.maximum(k - 1, 0)]
    b = coarse[np.minimum(k + 1, n_v - 1)]
    x1 = b - INVPHI * (b - a)
    x2 = a + INVPHI * (b - a)
    f1, f2 = obj(x1), obj(x2)
    for _ in range(refine_iters):
        left = f1 <= f2
        b = np.where(left, x2, b)
        a = np.where(left, a, x1)
        x1n = np.where(left, b - INVPHI * (b - a), x2)
        x2n = np.where(left, x1, a + INVPHI * (b - a))
        fp = obj(np.where(left, x1n, x2n))
        f1, f2 = np.where(left, fp, f2), np.where(left, f1, fp)
        x1, x2 = x1n, x2n
    for xs, fs in ((x1, f1), (x2, f2)):
        better = fs < best
        best = np.where(better, fs, best)
        vbest = np.where(better, xs, vbest)
    return best, vbest


def step(f, decay, weight, dt, c, dx, v_max, mode, q2, q1, q0, vtab, ltab,
         method=0, n_v=49, refine_iters=40, threads=1):
    """One step; returns ``(values, argmin velocities)``."""
    f = np.asarray(f, dtype=float)
    if method == 1:
        return _golden(f, decay, weight, dt, c, dx, v_max, mode, q2, q1, q0, vtab, ltab, n_v, refine_iters)
    if mode == 0:
        return _quadratic(f, decay, weight, dt, c, dx, v_max, q2, q1, q0)
    return _candidates(f, decay, weight, dt, c, dx, v_max, vtab, ltab)


def run(f0, decay, weight, dt, c, dx, v_max, mode, q2, q1, q0, vtab, ltab, nsteps,
        ref=None, bound=math.inf, stop_rate=-1.0, method=0, n_v=49, refine_iters=40, threads=1):
    """Up to ``nsteps`` steps; see ``_slcore.run`` for the return contract."""
    cur = np.array(f0, dtype=float, copy=True)
    stats = np.full((nsteps, 5), np.nan)
    status = 0
    done = 0
    vtol = v_max * (1.0 - 1e-12)
    for k in range(nsteps):
        nxt, vs = step(cur, decay, weight, dt, c, dx, v_max, mode, q2, q1, q0, vtab, ltab,
                       method, n_v, refine_iters)
        lo, hi = nxt.min(), nxt.max()
        ch = np.abs(nxt - cur).max()
        stats[k] = (
            np.abs(nxt - ref).max() if ref is not None else 0.0,
            lo,
            hi,
            ch / dt,
            np.count_nonzero(np.abs(vs) >= vtol) / nxt.size,
        )
        cur = nxt
        done = k + 1
        if not (lo >= -bound and hi <= bound):
            status = 1
            break
        if ch / dt < stop_rate:
            status = 2
            break
    return cur, stats[:done], status
