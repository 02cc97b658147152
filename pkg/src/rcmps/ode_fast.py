"""Compiled hot loop for the block-system integrations.

Same Dormand-Prince 4(5) pair, controller, and node-landing semantics as
:mod:`rcmps.ode`, specialized to right-hand sides of the form
A0 + J(x) A1 acting block-wise (the only form the solver ever integrates).
The kernel J comes from a cubic-Hermite table so the whole step loop stays
inside compiled code.  Falls back transparently to the generic integrator
when numba is unavailable; both paths are cross-checked in the tests.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is normally installed
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap(args[0]) if args and callable(args[0]) else wrap


_HALF_PI = 0.5 * np.pi

# Dormand-Prince coefficients (flattened; see rcmps.ode for the tableau)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.zeros((7, 7))
_A[1, 0] = 1 / 5
_A[2, :2] = [3 / 40, 9 / 40]
_A[3, :3] = [44 / 45, -56 / 15, 32 / 9]
_A[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
_A[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
_A[6, :6] = [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B5 - np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_BUDGET = 2


@njit(cache=True)
def _j_lookup(x, m, cutoff, t0, ht, logj, dlogj):
    ax = abs(x)
    if ax < cutoff:
        return 0.0
    arg = np.log(m * ax) / _HALF_PI
    t = np.log(arg + np.sqrt(arg * arg + 1.0))  # asinh
    pos = (t - t0) / ht
    i = int(pos)
    if i < 0:
        return 0.0
    if i >= logj.shape[0] - 1:
        i = logj.shape[0] - 2
    u = pos - i
    u2 = u * u
    u3 = u2 * u
    h00 = 2 * u3 - 3 * u2 + 1
    h10 = u3 - 2 * u2 + u
    h01 = -2 * u3 + 3 * u2
    h11 = u3 - u2
    val = (
        h00 * logj[i]
        + h10 * ht * dlogj[i]
        + h01 * logj[i + 1]
        + h11 * ht * dlogj[i + 1]
    )
    return np.exp(val)


@njit(cache=True)
def _mm_into(out, A, B, alpha):
    # out += alpha * A @ B for small complex matrices
    D = out.shape[0]
    for i in range(D):
        for j in range(D):
            acc = 0.0 + 0.0j
            for k in range(D):
                acc += A[i, k] * B[k, j]
            out[i, j] += alpha * acc


@njit(cache=True)
def _rhs(out, u, tmp, E, F, G, H, jx, ltgt, lsrc, lmats, lscale, rtgt, rsrc,
         rmats, rscale, sign):
    B = u.shape[0]
    D = u.shape[1]
    out[:] = 0.0
    for b in range(B):
        _mm_into(out[b], E, u[b], 1.0)
        _mm_into(out[b], u[b], F, 1.0)
        tmp[:] = 0.0
        _mm_into(tmp, G, u[b], 1.0)
        _mm_into(out[b], tmp, H, 1.0)
    if jx != 0.0:
        for c in range(ltgt.shape[0]):
            _mm_into(out[ltgt[c]], lmats[c], u[lsrc[c]], jx * lscale[c])
        for c in range(rtgt.shape[0]):
            _mm_into(out[rtgt[c]], u[rsrc[c]], rmats[c], jx * rscale[c])
    if sign < 0:
        for b in range(B):
            for i in range(D):
                for j in range(D):
                    out[b, i, j] = -out[b, i, j]


@njit(cache=True)
def _rk45_packed(
    y, values, checkpoints, n_record, forward,
    E, F, G, H,
    ltgt, lsrc, lmats, lscale, rtgt, rsrc, rmats, rscale, sign,
    x_start, tol, m, cutoff, t0, ht, logj, dlogj,
    coefA, coefC, coefB5, coefErr,
):
    B = y.shape[0]
    D = y.shape[1]
    n = B * D * D
    stages = np.empty((7, B, D, D), dtype=np.complex128)
    ys = np.empty((B, D, D), dtype=np.complex128)
    tmp = np.empty((D, D), dtype=np.complex128)

    x = x_start
    jx = _j_lookup(x, m, cutoff, t0, ht, logj, dlogj)
    _rhs(stages[0], y, tmp, E, F, G, H, jx, ltgt, lsrc, lmats, lscale,
         rtgt, rsrc, rmats, rscale, sign)
    dirn = 1.0 if forward else -1.0
    h = dirn * min(0.25 / m, abs(checkpoints[0] - x))
    err_prev = 1.0

    i_cp = 0
    steps = 0
    n_cp = checkpoints.shape[0]
    while i_cp < n_cp:
        target = checkpoints[i_cp]
        if dirn * (x + h) >= dirn * target:
            h_step = target - x
            landing = True
        else:
            h_step = h
            landing = False
        # resolvability relative to the float spacing at x (numba-safe form)
        if abs(h_step) < 16.0 * (2.220446049250313e-16 * abs(x)) + 1e-300:
            return STATUS_UNDERFLOW, x

        for s in range(1, 7):
            ys[:] = y
            for q in range(s):
                a = coefA[s, q]
                if a != 0.0:
                    for b in range(B):
                        for i in range(D):
                            for j in range(D):
                                ys[b, i, j] += h_step * a * stages[q, b, i, j]
            xs = x + coefC[s] * h_step
            jx = _j_lookup(xs, m, cutoff, t0, ht, logj, dlogj)
            _rhs(stages[s], ys, tmp, E, F, G, H, jx, ltgt, lsrc, lmats,
                 lscale, rtgt, rsrc, rmats, rscale, sign)

        # 5th-order solution into ys, embedded error estimate
        err_sq = 0.0
        ys[:] = y
        for q in range(7):
            bq = coefB5[q]
            if bq != 0.0:
                for b in range(B):
                    for i in range(D):
                        for j in range(D):
                            ys[b, i, j] += h_step * bq * stages[q, b, i, j]
        for b in range(B):
            for i in range(D):
                for j in range(D):
                    ev = 0.0 + 0.0j
                    for q in range(7):
                        eq = coefErr[q]
                        if eq != 0.0:
                            ev += eq * stages[q, b, i, j]
                    ev *= h_step
                    y0a = abs(y[b, i, j])
                    y1a = abs(ys[b, i, j])
                    sc = 1.0 + (y0a if y0a > y1a else y1a)
                    r = abs(ev) / sc
                    err_sq += r * r
        err = np.sqrt(err_sq / n) / tol

        if err <= 1.0:
            x = target if landing else x + h_step
            y[:] = ys
            stages[0] = stages[6]
            if landing:
                if i_cp < n_record:
                    idx = i_cp if forward else n_record - 1 - i_cp
                    values[idx] = y
                i_cp += 1
            else:
                if err < 1e-12:
                    err = 1e-12
                factor = 0.9 * err**-0.14 * err_prev**0.08
                err_prev = err
                if factor > 5.0:
                    factor = 5.0
                elif factor < 0.2:
                    factor = 0.2
                h = h_step * factor
        else:
            shrink = 0.9 * err**-0.2
            if shrink < 0.2:
                shrink = 0.2
            h = h_step * shrink
        steps += 1
        if steps > 2_000_000:
            return STATUS_BUDGET, x
    return STATUS_OK, x
