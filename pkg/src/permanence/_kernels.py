"""Compiled inner loops.

Orbits are strictly sequential, so the per-step cost of small numpy calls
dominates long runs.  The zoo families get a compiled step here; anything
else falls back to the numpy evaluator in :mod:`permanence.dynamics`.

Parameter layouts (``fp`` float array, ``ip`` int array):

* ``LV``      fp = [B (m*m, row major), c (m)]
* ``ANNUAL``  fp = [g (m), Y (m), s (m), C (m*m)]
* ``META``    ip = [k]; fp = [B^j (k*4), c^j (k*2), D^1 (k*k), D^2 (k*k)]
* ``SIR``     fp = [mortality, beta, c]
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

LV = 0
ANNUAL = 1
META = 2
SIR = 3

OK = 0
NONFINITE = 1
OUT_OF_DOMAIN = 2

# relative slack on N >= I + R; rounding in the R update can cost an ulp
SIR_DOMAIN_RTOL = 1e-12
SERIES_CUTOFF = 1e-5


@njit(cache=True, nogil=True)
def sir_u(y, beta):
    z = beta * y
    if z < SERIES_CUTOFF:
        return beta * (1.0 - 0.5 * z + z * z / 6.0)
    return -math.expm1(-z) / y


@njit(cache=True, nogil=True)
def bump(x, in_lo, in_hi, out_lo, out_hi):
    psi = 1.0
    for k in range(x.shape[0]):
        z = x[k]
        if z < out_lo[k] or z > out_hi[k]:
            return 0.0
        if z < in_lo[k]:
            t = (z - out_lo[k]) / (in_lo[k] - out_lo[k])
            psi *= t * t * (3.0 - 2.0 * t)
        elif z > in_hi[k]:
            t = (out_hi[k] - z) / (out_hi[k] - in_hi[k])
            psi *= t * t * (3.0 - 2.0 * t)
    return psi


@njit(cache=True, nogil=True)
def map_step(code, x, fp, ip, y):
    """Write one step of the family map into ``y``; return a status code."""
    if code == LV:
        m = x.shape[0]
        for i in range(m):
            s = 0.0
            for j in range(m):
                s += fp[i * m + j] * x[j]
            y[i] = x[i] * math.exp(s + fp[m * m + i])
    elif code == ANNUAL:
        m = x.shape[0]
        for i in range(m):
            s = 0.0
            for j in range(m):
                s += fp[3 * m + i * m + j] * fp[j] * x[j]
            a = fp[i] * math.exp(fp[m + i] - s) + (1.0 - fp[i]) * fp[2 * m + i]
            y[i] = x[i] * a
    elif code == META:
        k = ip[0]
        cb = 4 * k
        d1 = cb + 2 * k
        for i in range(2):
            dof = d1 + i * k * k
            for ell in range(k):
                y[i * k + ell] = 0.0
            for j in range(k):
                s = fp[4 * j + 2 * i] * x[j] + fp[4 * j + 2 * i + 1] * x[k + j]
                w = x[i * k + j] * math.exp(fp[cb + 2 * j + i] - s)
                for ell in range(k):
                    y[i * k + ell] += w * fp[dof + j * k + ell]
    elif code == SIR:
        mort = fp[0]
        beta = fp[1]
        c = fp[2]
        n_ = x[0]
        inf = x[1]
        rem = x[2]
        if n_ - inf - rem < -SIR_DOMAIN_RTOL * n_:
            return OUT_OF_DOMAIN
        q = math.exp(-mort)
        a1 = 1.0 / (1.0 + c * n_) + q
        a = q * max(n_ - inf - rem, 0.0) * sir_u(inf, beta)
        y[0] = n_ * a1
        y[1] = inf * a
        y[2] = inf * q + rem * q
    return OK


@njit(cache=True, nogil=True)
def run(code, fp, ip, delta, coord_sign, in_lo, in_hi, out_lo, out_hi,
        offsets, heights, x0s, horizon, burn_in, late_start, nwin,
        record, states, min_norm, win_max, late_max, final, status, stop,
        bad_species, diverged, underflow, underflow_tol):
    """Iterate every start in ``x0s`` for ``horizon`` steps.

    Statistics cover the post-burn-in states ``burn_in <= k < horizon``;
    ``late_max`` covers ``late_start <= k < horizon``.
    """
    n_starts = x0s.shape[0]
    n = x0s.shape[1]
    m = offsets.shape[0] - 1
    post = horizon - burn_in
    x = np.empty(n)
    y = np.empty(n)
    norms = np.empty(m)
    for s in range(n_starts):
        for c in range(n):
            x[c] = x0s[s, c]
        if record:
            for c in range(n):
                states[s, 0, c] = x[c]
        for i in range(m):
            min_norm[s, i] = np.inf
            late_max[s, i] = 0.0
            for w in range(nwin):
                win_max[s, i, w] = 0.0
        status[s] = OK
        stop[s] = horizon
        bad_species[s] = -1
        diverged[s] = False
        for k in range(horizon):
            for i in range(m):
                acc = 0.0
                for c in range(offsets[i], offsets[i + 1]):
                    acc += x[c]
                norms[i] = acc
                if acc > 1e3 * heights[i]:
                    diverged[s] = True
            if k >= burn_in:
                w = ((k - burn_in) * nwin) // post
                for i in range(m):
                    if norms[i] < min_norm[s, i]:
                        min_norm[s, i] = norms[i]
                    if norms[i] > win_max[s, i, w]:
                        win_max[s, i, w] = norms[i]
                    if k >= late_start and norms[i] > late_max[s, i]:
                        late_max[s, i] = norms[i]
            code_out = map_step(code, x, fp, ip, y)
            if code_out != OK:
                status[s] = code_out
                stop[s] = k
                break
            if delta != 0.0:
                psi = bump(x, in_lo, in_hi, out_lo, out_hi)
                if psi > 0.0:
                    for c in range(n):
                        if coord_sign[c] != 0.0:
                            y[c] *= math.exp(coord_sign[c] * psi * delta / 2.0)
            bad = -1
            for c in range(n):
                if not math.isfinite(y[c]):
                    bad = c
                    break
            if bad >= 0:
                for i in range(m):
                    if offsets[i] <= bad < offsets[i + 1]:
                        bad_species[s] = i
                status[s] = NONFINITE
                stop[s] = k
                break
            for i in range(m):
                if norms[i] > underflow_tol:
                    acc = 0.0
                    for c in range(offsets[i], offsets[i + 1]):
                        acc += y[c]
                    if acc <= underflow_tol:
                        underflow[s, i] = True
            for c in range(n):
                x[c] = y[c]
            if record:
                for c in range(n):
                    states[s, k + 1, c] = x[c]
        for c in range(n):
            final[s, c] = x[c]


@njit(cache=True, nogil=True)
def propagate(mats, v0):
    """Push a row vector through a matrix sequence, renormalising in l1.

    Returns the per-step log growth increments, the final unit direction and
    the index of the first step where the product vanished (-1 if none).
    """
    t = mats.shape[0]
    d = mats.shape[1]
    v = v0.copy()
    w = np.empty(d)
    incs = np.empty(t)
    for s in range(t):
        tot = 0.0
        for k in range(d):
            acc = 0.0
            for j in range(d):
                acc += v[j] * mats[s, j, k]
            w[k] = acc
            tot += acc
        if tot <= 0.0:
            for r in range(s, t):
                incs[r] = -np.inf
            return incs, v, s
        incs[s] = math.log(tot)
        for k in range(d):
            v[k] = w[k] / tot
    return incs, v, -1
