"""Compiled inner loop of the one-dimensional Lax-Oleinik step for mechanical Hamiltonians."""

import math

import numba as nb
import numpy as np

# the default layer probes for TBB and warns when it is too old
nb.config.THREADING_LAYER = "omp"

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@nb.njit(cache=True, inline="always")
def _interp(u, y, dx, N):
    s = y / dx
    i = math.floor(s)
    f = s - i
    i0 = int(i) % N
    i1 = (i0 + 1) % N
    return (1.0 - f) * u[i0] + f * u[i1]


@nb.njit(cache=True, inline="always")
def _potential(z, kappa, a, b):
    c1 = math.cos(kappa * z)
    s1 = math.sin(kappa * z)
    ck, sk = 1.0, 0.0
    val = a[0]
    for k in range(1, a.size):
        ck, sk = ck * c1 - sk * s1, sk * c1 + ck * s1
        val += a[k] * ck + b[k] * sk
    return val


@nb.njit(cache=True, inline="always")
def _objective(u, x, y, dx, N, dt, disc, w, drift, offset, kappa, a, b):
    v = (x - y) / dt
    mid = 0.5 * (x + y)
    lag = 0.5 * v * v - drift * v - _potential(mid, kappa, a, b) - offset
    return disc * _interp(u, y, dx, N) + w * lag


@nb.njit(cache=True, inline="always")
def _better(val, y, best_val, best_y, x):
    if val < best_val:
        return True
    if val == best_val:
        av, bv = abs(x - y), abs(x - best_y)
        if av < bv or (av == bv and y < best_y):
            return True
    return False


@nb.njit(cache=True, parallel=True)
def lo_step_mechanical(u, xq, dx, dt, disc, w, reach, M, n_golden, drift, offset, kappa, a, b):
    """Minimize the one-step Lax-Oleinik functional at every query point.

    Returns (values, argmin endpoints, boundary flags).
    """
    N = u.size
    Q = xq.size
    out = np.empty(Q)
    arg = np.empty(Q)
    flag = np.zeros(Q, dtype=np.bool_)
    J = (M - 1) // 2
    spacing = reach / J
    for q in nb.prange(Q):
        x = xq[q]
        best_y = x
        best = _objective(u, x, x, dx, N, dt, disc, w, drift, offset, kappa, a, b)
        # enumeration ordered by |v|: 0, then +j (smaller y) before -j
        for j in range(1, J + 1):
            for sgn in (1.0, -1.0):
                y = x - sgn * j * spacing
                val = _objective(u, x, y, dx, N, dt, disc, w, drift, offset, kappa, a, b)
                if _better(val, y, best, best_y, x):
                    best, best_y = val, y
        # grid nodes inside the search interval
        k_lo = math.ceil((x - reach) / dx)
        k_hi = math.floor((x + reach) / dx)
        for k in range(k_lo, k_hi + 1):
            y = k * dx
            val = _objective(u, x, y, dx, N, dt, disc, w, drift, offset, kappa, a, b)
            if _better(val, y, best, best_y, x):
                best, best_y = val, y
        # golden-section refinement around the best candidate
        lo = max(best_y - spacing, x - reach)
        hi = min(best_y + spacing, x + reach)
        c = hi - _INV_PHI * (hi - lo)
        d = lo + _INV_PHI * (hi - lo)
        fc = _objective(u, x, c, dx, N, dt, disc, w, drift, offset, kappa, a, b)
        fd = _objective(u, x, d, dx, N, dt, disc, w, drift, offset, kappa, a, b)
        for _ in range(n_golden):
            if fc <= fd:
                hi, d, fd = d, c, fc
                c = hi - _INV_PHI * (hi - lo)
                fc = _objective(u, x, c, dx, N, dt, disc, w, drift, offset, kappa, a, b)
            else:
                lo, c, fc = c, d, fd
                d = lo + _INV_PHI * (hi - lo)
                fd = _objective(u, x, d, dx, N, dt, disc, w, drift, offset, kappa, a, b)
        if fc <= fd:
            y, val = c, fc
        else:
            y, val = d, fd
        if _better(val, y, best, best_y, x):
            best, best_y = val, y
        out[q] = best
        arg[q] = best_y
        edge = 1e-9 * reach + 2.0 * (hi - lo)
        if abs(abs(x - best_y) - reach) <= edge:
            flag[q] = True
    return out, arg, flag
