# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled semi-Lagrangian kernels (see ``_fallback`` for the contract)."""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport floor, ceil, fabs, sqrt, INFINITY

cnp.import_array()

BACKEND = "cython"

cdef double INVPHI = (sqrt(5.0) - 1.0) / 2.0
# foot positions are restricted to multiples of 1/LATTICE of a cell
cdef double LATTICE = 65536.0
cdef double INV_LATTICE = 1.0 / 65536.0

cdef enum:
    EXACT = 0
    GOLDEN = 1


cdef inline double foot(const double[::1] f, Py_ssize_t n, double s) noexcept nogil:
    cdef double jf = floor(s)
    cdef double w = s - jf
    cdef Py_ssize_t j = (<Py_ssize_t> jf) % n
    if j < 0:
        j += n
    cdef Py_ssize_t j1 = j + 1
    if j1 == n:
        j1 = 0
    return (1.0 - w) * f[j] + w * f[j1]


cdef inline double table_l(const double[::1] vtab, const double[:, ::1] ltab,
                           Py_ssize_t i, double v) noexcept nogil:
    cdef Py_ssize_t m = vtab.shape[0]
    cdef double dv = (vtab[m - 1] - vtab[0]) / (m - 1)
    cdef double s = (v - vtab[0]) / dv
    if s < 0.0:
        s = 0.0
    elif s > m - 1.0:
        s = m - 1.0
    cdef Py_ssize_t k = <Py_ssize_t> floor(s)
    if k > m - 2:
        k = m - 2
    cdef double w = s - k
    return (1.0 - w) * ltab[i, k] + w * ltab[i, k + 1]


cdef inline double objective(const double[::1] f, Py_ssize_t n, Py_ssize_t i, double dec,
                             double wt, double dt, double c, double kappa, int mode, double q2,
                             double q1i, double q0i, const double[::1] vtab,
                             const double[:, ::1] ltab, double v) noexcept nogil:
    cdef double l
    if mode == 0:
        l = (q2 * v + q1i) * v + q0i
    else:
        l = table_l(vtab, ltab, i, v)
    return dec * foot(f, n, i + (-v / kappa)) + wt * (l + c)


cdef inline double node_quadratic(const double[::1] f, Py_ssize_t n, Py_ssize_t i, double dec,
                                  double wt, double dt, double c, double kappa, double r, double q2,
                                  double q1i, double q0i, double inv2a,
                                  Py_ssize_t lo_cell, Py_ssize_t hi_cell, double* vstar) noexcept nogil:
    cdef double best = INFINITY, vbest = 0.0, d_lo, d_hi, a, b, d, v, w, val
    cdef Py_ssize_t m, ja, jb, k, k0
    for m in range(lo_cell, hi_cell + 1):
        d_lo = m if m > -r else -r
        d_hi = (m + 1) if (m + 1) < r else r
        if d_hi < d_lo:
            continue
        ja = i + m
        if ja < 0:
            ja = ja + n
        elif ja >= n:
            ja = ja - n
        jb = ja + 1
        if jb == n:
            jb = 0
        a = f[ja]
        b = f[jb]
        d = (q1i * kappa * wt - dec * (b - a)) * inv2a
        if d < d_lo:
            d = d_lo
        elif d > d_hi:
            d = d_hi
        # snap to a fixed sub-cell lattice so the candidate set does not depend on f;
        # neighbours of the optimum cover rounding in d
        k0 = <Py_ssize_t> floor((d - m) * LATTICE) - 1
        for k in range(k0, k0 + 4):
            w = k * INV_LATTICE
            if w < d_lo - m:
                w = d_lo - m
            elif w > d_hi - m:
                w = d_hi - m
            v = -kappa * (m + w)
            # convex form: monotone in (a, b) under rounding
            val = dec * ((1.0 - w) * a + w * b) + wt * ((q2 * v + q1i) * v + q0i + c)
            if val < best:
                best = val
                vbest = v
    vstar[0] = vbest
    return best


cdef inline double node_candidates(const double[::1] f, Py_ssize_t n, Py_ssize_t i, double dec,
                                   double wt, double dt, double c, double kappa, const double[::1] vtab,
                                   const double[:, ::1] ltab, const double[::1] cands,
                                   double* vstar) noexcept nogil:
    cdef double best = INFINITY, vbest = 0.0, v, val
    cdef Py_ssize_t k
    for k in range(cands.shape[0]):
        v = cands[k]
        val = objective(f, n, i, dec, wt, dt, c, kappa, 1, 0.0, 0.0, 0.0, vtab, ltab, v)
        if val < best:
            best = val
            vbest = v
    vstar[0] = vbest
    return best


cdef inline double node_golden(const double[::1] f, Py_ssize_t n, Py_ssize_t i, double dec,
                               double wt, double dt, double c, double kappa, int mode, double q2,
                               double q1i, double q0i, const double[::1] vtab,
                               const double[:, ::1] ltab, const double[::1] coarse,
                               int refine_iters, double* vstar) noexcept nogil:
    cdef Py_ssize_t n_v = coarse.shape[0], k, kb = 0
    cdef int it
    cdef double best = INFINITY, vbest, val, a, b, x1, x2, f1, f2
    for k in range(n_v):
        val = objective(f, n, i, dec, wt, dt, c, kappa, mode, q2, q1i, q0i, vtab, ltab, coarse[k])
        if val < best:
            best = val
            kb = k
    vbest = coarse[kb]
    a = coarse[kb - 1] if kb > 0 else coarse[0]
    b = coarse[kb + 1] if kb < n_v - 1 else coarse[n_v - 1]
    x1 = b - INVPHI * (b - a)
    x2 = a + INVPHI * (b - a)
    f1 = objective(f, n, i, dec, wt, dt, c, kappa, mode, q2, q1i, q0i, vtab, ltab, x1)
    f2 = objective(f, n, i, dec, wt, dt, c, kappa, mode, q2, q1i, q0i, vtab, ltab, x2)
    for it in range(refine_iters):
        if f1 <= f2:
            b = x2
            x2 = x1
            f2 = f1
            x1 = b - INVPHI * (b - a)
            f1 = objective(f, n, i, dec, wt, dt, c, kappa, mode, q2, q1i, q0i, vtab, ltab, x1)
        else:
            a = x1
            x1 = x2
            f1 = f2
            x2 = a + INVPHI * (b - a)
            f2 = objective(f, n, i, dec, wt, dt, c, kappa, mode, q2, q1i, q0i, vtab, ltab, x2)
    if f1 < best:
        best = f1
        vbest = x1
    if f2 < best:
        best = f2
        vbest = x2
    vstar[0] = vbest
    return best


cdef void sweep(const double[::1] f, double[::1] out, double[::1] vout,
                const double[::1] decay, const double[::1] weight, double dt, double c, double dx, double v_max,
                int mode, int method, double q2, const double[::1] q1, const double[::1] q0,
                const double[::1] vtab, const double[:, ::1] ltab, const double[::1] cands,
                const double[::1] coarse, int refine_iters, int threads) noexcept nogil:
    cdef Py_ssize_t n = f.shape[0], i
    cdef double kappa = dx / dt
    cdef double r = v_max / kappa
    cdef double q2k = 0.0
    cdef Py_ssize_t lo_cell = <Py_ssize_t> floor(-r)
    cdef Py_ssize_t hi_cell = <Py_ssize_t> ceil(r) - 1
    cdef double vs
    if mode == 0:
        q2k = 2.0 * q2 * kappa * kappa
    if threads <= 1:
        for i in range(n):
            if method == GOLDEN:
                out[i] = node_golden(f, n, i, decay[i], weight[i], dt, c, kappa, mode, q2, q1[i], q0[i],
                                     vtab, ltab, coarse, refine_iters, &vs)
            elif mode == 0:
                out[i] = node_quadratic(f, n, i, decay[i], weight[i], dt, c, kappa, r, q2, q1[i], q0[i],
                                        1.0 / (q2k * weight[i]) if mode == 0 else 0.0, lo_cell, hi_cell, &vs)
            else:
                out[i] = node_candidates(f, n, i, decay[i], weight[i], dt, c, kappa, vtab, ltab, cands, &vs)
            vout[i] = vs
    else:
        for i in prange(n, num_threads=threads, schedule="static"):
            if method == GOLDEN:
                out[i] = node_golden(f, n, i, decay[i], weight[i], dt, c, kappa, mode, q2, q1[i], q0[i],
                                     vtab, ltab, coarse, refine_iters, &vs)
            elif mode == 0:
                out[i] = node_quadratic(f, n, i, decay[i], weight[i], dt, c, kappa, r, q2, q1[i], q0[i],
                                        1.0 / (q2k * weight[i]) if mode == 0 else 0.0, lo_cell, hi_cell, &vs)
            else:
                out[i] = node_candidates(f, n, i, decay[i], weight[i], dt, c, kappa, vtab, ltab, cands, &vs)
            vout[i] = vs


def _prepare(vtab, v_max, dx, dt, n_v):
    from ._fallback import _table_candidates
    kappa = dx / dt
    cands = np.ascontiguousarray(_table_candidates(np.asarray(vtab), v_max, kappa, v_max / kappa)
                                 if len(vtab) else np.zeros(1), dtype=float)
    coarse = np.linspace(-v_max, v_max, max(n_v, 2))
    return cands, coarse


def step(const double[::1] f, const double[::1] decay, const double[::1] weight, double dt, double c, double dx,
         double v_max, int mode, double q2, const double[::1] q1, const double[::1] q0,
         const double[::1] vtab, const double[:, ::1] ltab, int method=0, int n_v=49,
         int refine_iters=40, int threads=1):
    """One step; returns ``(values, argmin velocities)``."""
    cdef Py_ssize_t n = f.shape[0]
    out_a = np.empty(n)
    vout_a = np.empty(n)
    cands_a, coarse_a = _prepare(vtab, v_max, dx, dt, n_v)
    cdef double[::1] cands = cands_a
    cdef double[::1] coarse = coarse_a
    cdef double[::1] out = out_a
    cdef double[::1] vout = vout_a
    with nogil:
        sweep(f, out, vout, decay, weight, dt, c, dx, v_max, mode, method, q2, q1, q0, vtab, ltab,
              cands, coarse, refine_iters, threads)
    return out_a, vout_a


def run(f0, const double[::1] decay, const double[::1] weight, double dt, double c, double dx, double v_max,
        int mode, double q2, const double[::1] q1, const double[::1] q0,
        const double[::1] vtab, const double[:, ::1] ltab, Py_ssize_t nsteps,
        ref=None, double bound=INFINITY, double stop_rate=-1.0, int method=0,
        int n_v=49, int refine_iters=40, int threads=1):
    """Up to ``nsteps`` steps from ``f0``.

    Per step records ``(dist_to_ref, min, max, max|change|/dt, v_hit_fraction)``.
    Stops early with status 1 when a value leaves ``[-bound, bound]`` (or is
    not finite), or status 2 when ``max|change|/dt < stop_rate``.
    Returns ``(values, stats[:k], status)``.
    """
    cdef Py_ssize_t n = decay.shape[0], k, i, done = 0, hits
    cdef int status = 0
    a_arr = np.array(f0, dtype=float, copy=True)
    b_arr = np.empty(n)
    vbuf_a = np.empty(n)
    stats_a = np.full((nsteps, 5), np.nan)
    cands_a, coarse_a = _prepare(vtab, v_max, dx, dt, n_v)
    cdef double[::1] cands = cands_a
    cdef double[::1] coarse = coarse_a
    cdef double[::1] cur = a_arr
    cdef double[::1] nxt = b_arr
    cdef double[::1] tmp
    cdef double[::1] vbuf = vbuf_a
    cdef double[:, ::1] stats = stats_a
    cdef bint has_ref = ref is not None
    cdef const double[::1] refv = np.ascontiguousarray(ref, dtype=float) if has_ref else np.zeros(1)
    cdef double dist, lo, hi, ch, x, vtol = v_max * (1.0 - 1e-12)
    with nogil:
        for k in range(nsteps):
            sweep(cur, nxt, vbuf, decay, weight, dt, c, dx, v_max, mode, method, q2, q1, q0, vtab, ltab,
                  cands, coarse, refine_iters, threads)
            dist = 0.0
            lo = INFINITY
            hi = -INFINITY
            ch = 0.0
            hits = 0
            for i in range(n):
                x = nxt[i]
                if x < lo:
                    lo = x
                if x > hi:
                    hi = x
                if fabs(x - cur[i]) > ch:
                    ch = fabs(x - cur[i])
                if has_ref and fabs(x - refv[i]) > dist:
                    dist = fabs(x - refv[i])
                if fabs(vbuf[i]) >= vtol:
                    hits += 1
            stats[k, 0] = dist if has_ref else 0.0
            stats[k, 1] = lo
            stats[k, 2] = hi
            stats[k, 3] = ch / dt
            stats[k, 4] = hits / <double> n
            tmp = cur
            cur = nxt
            nxt = tmp
            done = k + 1
            if not (lo >= -bound and hi <= bound):
                status = 1
                break
            if ch / dt < stop_rate:
                status = 2
                break
    return np.asarray(cur).copy(), stats_a[:done], status
