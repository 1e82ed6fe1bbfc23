"""Compiled inner loops for the sparse solvers.

All kernels work from the Gram matrix ``G = D.T @ D`` and the correlations
``c0 = D.T @ x`` so that a batch of signals shares one Gram matrix.
"""

import os

import numba
import numpy as np
from numba import njit, prange

# The OpenMP layer is thread-safe and avoids numba's probe of an old TBB.
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "omp"

_MAX_STEPS_PER_ATOM = 8


@njit(cache=True)
def _solve_spd(A, b):
    # Cholesky solve for small symmetric positive definite systems.
    k = A.shape[0]
    L = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1):
            s = A[i, j]
            for t in range(j):
                s -= L[i, t] * L[j, t]
            if i == j:
                if s <= 0.0:
                    return b * np.nan
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    y = np.empty(k)
    for i in range(k):
        s = b[i]
        for t in range(i):
            s -= L[i, t] * y[t]
        y[i] = s / L[i, i]
    x = np.empty(k)
    for i in range(k - 1, -1, -1):
        s = y[i]
        for t in range(i + 1, k):
            s -= L[t, i] * x[t]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def lars_lasso(G, c0, lam, cap, out_idx, out_val):
    """Homotopy (LARS with lasso modification) for min 0.5|x-Da|^2 + lam|a|_1.

    Writes the support into ``out_idx``/``out_val`` and returns
    ``(size, status)``; status 0 = solved, 1 = support cap or rank limit hit.
    """
    p = c0.shape[0]
    active = np.empty(cap, dtype=np.int64)
    beta = np.zeros(cap)
    inset = np.zeros(p, dtype=np.bool_)
    c = c0.copy()

    best = -1
    lam_cur = 0.0
    for j in range(p):
        v = abs(c[j])
        if v > lam_cur:
            lam_cur = v
            best = j
    if best < 0 or lam_cur <= lam or cap == 0:
        return 0, 0
    k = 1
    active[0] = best
    inset[best] = True
    status = 0
    just_dropped = -1

    for _ in range(_MAX_STEPS_PER_ATOM * (p + 1)):
        GA = np.empty((k, k))
        s = np.empty(k)
        for t in range(k):
            for u in range(k):
                GA[t, u] = G[active[t], active[u]]
            if beta[t] > 0.0:
                s[t] = 1.0
            elif beta[t] < 0.0:
                s[t] = -1.0
            else:
                s[t] = 1.0 if c[active[t]] > 0.0 else -1.0
        w = _solve_spd(GA, s)
        if not np.isfinite(w[0]):
            status = 1
            break

        a = np.zeros(p)
        for t in range(k):
            col = active[t]
            wt = w[t]
            for j in range(p):
                a[j] += G[col, j] * wt

        gamma = lam_cur - lam
        event = 0
        who = -1
        for j in range(p):
            if inset[j]:
                continue
            # A freshly dropped atom sits on the boundary; ignore round-off re-entry.
            gmin = 1e-11 * lam_cur if j == just_dropped else 0.0
            den = 1.0 - a[j]
            if den > 0.0:
                g = (lam_cur - c[j]) / den
                if gmin < g < gamma:
                    gamma = g
                    event = 1
                    who = j
            den = 1.0 + a[j]
            if den > 0.0:
                g = (lam_cur + c[j]) / den
                if gmin < g < gamma:
                    gamma = g
                    event = 1
                    who = j
        for t in range(k):
            if w[t] != 0.0 and beta[t] != 0.0:
                g = -beta[t] / w[t]
                if 0.0 < g < gamma:
                    gamma = g
                    event = 2
                    who = t

        for t in range(k):
            beta[t] += gamma * w[t]
        lam_cur -= gamma
        just_dropped = -1

        if event == 2:
            inset[active[who]] = False
            just_dropped = active[who]
            for t in range(who, k - 1):
                active[t] = active[t + 1]
                beta[t] = beta[t + 1]
            k -= 1
            beta[k] = 0.0

        for j in range(p):
            c[j] = c0[j]
        for t in range(k):
            col = active[t]
            bt = beta[t]
            for j in range(p):
                c[j] -= G[col, j] * bt

        if event == 0:
            break
        if event == 1:
            if k == cap:
                status = 1
                break
            # Schur complement test: refuse atoms in the span of the support.
            if k > 0:
                gk = np.empty(k)
                for t in range(k):
                    gk[t] = G[active[t], who]
                for t in range(k):
                    for u in range(k):
                        GA[t, u] = G[active[t], active[u]]
                v = _solve_spd(GA, gk)
                schur = G[who, who] - np.dot(gk, v)
                if not schur > 1e-12 * G[who, who]:
                    status = 1
                    break
            active[k] = who
            beta[k] = 0.0
            inset[who] = True
            k += 1
        if k == 0:
            # Everything dropped out; restart from the largest correlation.
            best = -1
            top = 0.0
            for j in range(p):
                if abs(c[j]) > top:
                    top = abs(c[j])
                    best = j
            if best < 0 or top <= lam:
                break
            active[0] = best
            inset[best] = True
            k = 1
    else:
        status = 1

    n_out = 0
    for t in range(k):
        if beta[t] != 0.0:
            out_idx[n_out] = active[t]
            out_val[n_out] = beta[t]
            n_out += 1
    return n_out, status


@njit(cache=True, parallel=True)
def lars_lasso_batch(G, C, lam, cap):
    p, n = C.shape
    idx = np.full((n, cap), -1, dtype=np.int64)
    val = np.zeros((n, cap))
    sizes = np.zeros(n, dtype=np.int64)
    flags = np.zeros(n, dtype=np.int64)
    for i in prange(n):
        k, st = lars_lasso(G, np.ascontiguousarray(C[:, i]), lam, cap, idx[i], val[i])
        sizes[i] = k
        flags[i] = st
    return idx, val, sizes, flags


@njit(cache=True)
def omp_gram(G, c0, yy, eps, cap, usable, out_idx, out_val, out_res):
    """Cholesky-updated OMP on unit-norm atoms.

    ``out_res`` receives the squared residual after each selection.
    Returns the support size.
    """
    p = c0.shape[0]
    if yy <= eps or cap == 0:
        return 0
    L = np.zeros((cap, cap))
    sel = np.empty(cap, dtype=np.int64)
    taken = np.zeros(p, dtype=np.bool_)
    for j in range(p):
        if not usable[j]:
            taken[j] = True
    c = c0.copy()
    coef = np.zeros(cap)
    k = 0
    r2 = yy
    floor = 1e-14 * np.sqrt(yy)
    while k < cap:
        best = -1
        bv = floor
        for j in range(p):
            if not taken[j]:
                v = abs(c[j])
                if v > bv:
                    bv = v
                    best = j
        if best < 0:
            break
        taken[best] = True
        if k > 0:
            v = np.empty(k)
            for i in range(k):
                s = G[sel[i], best]
                for t in range(i):
                    s -= L[i, t] * v[t]
                v[i] = s / L[i, i]
            d = G[best, best] - np.dot(v, v)
            if d <= 1e-10 * G[best, best]:
                continue
            for i in range(k):
                L[k, i] = v[i]
            L[k, k] = np.sqrt(d)
        else:
            L[0, 0] = np.sqrt(G[best, best])
        sel[k] = best
        k += 1
        # Solve L L^T coef = c0[sel]
        y = np.empty(k)
        for i in range(k):
            s = c0[sel[i]]
            for t in range(i):
                s -= L[i, t] * y[t]
            y[i] = s / L[i, i]
        for i in range(k - 1, -1, -1):
            s = y[i]
            for t in range(i + 1, k):
                s -= L[t, i] * coef[t]
            coef[i] = s / L[i, i]
        acc = 0.0
        for i in range(k):
            acc += c0[sel[i]] * coef[i]
        r2 = max(yy - acc, 0.0)
        out_res[k - 1] = r2
        if r2 <= eps:
            break
        for j in range(p):
            c[j] = c0[j]
        for i in range(k):
            col = sel[i]
            ci = coef[i]
            for j in range(p):
                c[j] -= G[col, j] * ci
    for i in range(k):
        out_idx[i] = sel[i]
        out_val[i] = coef[i]
    return k


@njit(cache=True, parallel=True)
def omp_batch(G, C, yy, eps, cap, usable):
    p, n = C.shape
    idx = np.full((n, cap), -1, dtype=np.int64)
    val = np.zeros((n, cap))
    res = np.zeros((n, max(cap, 1)))
    sizes = np.zeros(n, dtype=np.int64)
    for i in prange(n):
        sizes[i] = omp_gram(G, np.ascontiguousarray(C[:, i]), yy[i], eps, cap, usable,
                            idx[i], val[i], res[i])
    return idx, val, sizes
