"""Compiled inner loops for density evolution and the windowed FA decoder.

The readable reference implementations live in ``de`` and ``fa``; these
kernels are checked against them in the test suite.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _horner(c, x):
    acc = 0.0
    for k in range(c.shape[0] - 1, -1, -1):
        acc = acc * x + c[k]
    return acc


@njit(cache=True)
def poisson_step(y, lam, rates, pats, owner, out):
    """One Poisson-approximated DE step for general T (writes into ``out``)."""
    T = y.shape[0]
    q = np.empty(T)
    e = np.empty(T)
    s = np.zeros(T)
    for t in range(T):
        q[t] = rates[t] * _horner(lam[t], y[t])
        e[t] = math.exp(-q[t])
    for p in range(pats.shape[0]):
        t = owner[p]
        prod = 1.0
        for tb in range(T):
            if tb == t:
                continue
            c = pats[p, tb]
            term = e[tb]
            for k in range(1, c + 1):
                term *= q[tb] / k
            prod *= term
        s[t] += prod
    for t in range(T):
        out[t] = 1.0 - e[t] * s[t]


@njit(cache=True)
def run_poisson(lam, rates, pats, owner, y0, eps, max_iter, slack, traj):
    """Iterate from ``y0``; returns (converged, iterations, final y).

    ``traj`` has either zero rows (no recording) or ``max_iter + 1`` rows.
    """
    T = y0.shape[0]
    y = y0.copy()
    ny = np.empty(T)
    rec = traj.shape[0] > 0
    if rec:
        traj[0, :] = y
    if np.max(y) < eps:
        return True, 0, y
    for it in range(1, max_iter + 1):
        poisson_step(y, lam, rates, pats, owner, ny)
        if rec:
            traj[it, :] = ny
        if np.max(ny) < eps:
            return True, it, ny
        if np.max(np.abs(ny - y)) < slack:
            return False, it, ny
        y[:] = ny
    return False, max_iter, y


@njit(cache=True)
def _converges(lam, mdeg, shares, pats, owner, eta, eps, max_iter, slack):
    T = mdeg.shape[0]
    rates = np.empty(T)
    for t in range(T):
        rates[t] = shares[t] * eta * mdeg[t]
    empty = np.empty((0, T))
    ok, _, _ = run_poisson(lam, rates, pats, owner, np.ones(T), eps, max_iter, slack, empty)
    return ok


@njit(cache=True)
def bisect_threshold(lam, mdeg, shares, pats, owner, eps, max_iter, slack, tol, hi):
    """Largest converging sum load, to within ``tol``; -1.0 if ``tol`` fails."""
    if not _converges(lam, mdeg, shares, pats, owner, tol, eps, max_iter, slack):
        return -1.0
    lo = tol
    while _converges(lam, mdeg, shares, pats, owner, hi, eps, max_iter, slack):
        lo = hi
        hi *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _converges(lam, mdeg, shares, pats, owner, mid, eps, max_iter, slack):
            lo = mid
        else:
            hi = mid
    return lo


@njit(cache=True)
def _fa_combine(g_t, xii, rk, xt):
    """Return (f1 f2, f1 f2 + f3 f2 + f1 f4) for one type at one class."""
    a = g_t * xii
    b = rk * xt
    f = math.exp(-(a + b))
    return f, f * (1.0 + a + b)


@njit(cache=True)
def fa_bulk_step(b, g, L_shift, lam_shift, mdeg, N, out):
    """FA step for a spatially uniform profile (a class far from any boundary)."""
    T = b.shape[0]
    both = np.empty(T)
    single = np.empty(T)
    for t in range(T):
        xii = _horner(L_shift[t], b[t])
        xt = b[t] * _horner(lam_shift[t], b[t])
        both[t], single[t] = _fa_combine(g[t], xii, g[t] * (mdeg[t] - 1.0), xt)
    out[0] = 1.0 - both[0] * single[1]
    out[1] = 1.0 - both[1] * single[0]


@njit(cache=True)
def fa_step(y, beyond, g, L_shift, lam_shift, mdeg, N, out):
    """Frame-asynchronous DE step for T=2; ``y`` has shape (2, I).

    Classes past the horizon contribute ``beyond[t]`` to the forward window.
    """
    T, I = y.shape
    # per (type, class): f1 f2 and the "at most one packet of this type" factor
    both = np.empty((T, I))
    single = np.empty((T, I))
    prefix = np.empty(I + 1)
    inv = 1.0 / (N - 1)
    for t in range(T):
        far = beyond[t]
        acc = 0.0
        for j in range(1, N):
            acc += y[t, j] if j < I else far
        prefix[0] = 0.0
        scale = g[t] * (mdeg[t] - 1.0) * inv
        for i in range(I):
            yt = acc * inv
            xii = _horner(L_shift[t], yt)
            prefix[i + 1] = prefix[i] + y[t, i] * _horner(lam_shift[t], yt)
            acc -= y[t, i + 1] if i + 1 < I else far
            acc += y[t, i + N] if i + N < I else far
            # incoming window K_i: the up-to N-1 classes before i
            cnt = i if i < N - 1 else N - 1
            xt = (prefix[i] - prefix[i - cnt]) / cnt if cnt > 0 else 0.0
            both[t, i], single[t, i] = _fa_combine(g[t], xii, cnt * scale, xt)
    for i in range(I):
        out[0, i] = 1.0 - both[0, i] * single[1, i]
        out[1, i] = 1.0 - both[1, i] * single[0, i]


@njit(cache=True)
def run_fa(y0, beyond0, g, L_shift, lam_shift, mdeg, N, checked, eps, max_iter, slack):
    """Iterate the FA recursion; success when classes ``< checked`` all fall below eps.

    Returns (converged, iterations, y, beyond).
    """
    y = y0.copy()
    ny = np.empty_like(y)
    far = beyond0.copy()
    nfar = np.empty_like(far)
    T, I = y.shape
    for it in range(1, max_iter + 1):
        fa_step(y, far, g, L_shift, lam_shift, mdeg, N, ny)
        fa_bulk_step(far, g, L_shift, lam_shift, mdeg, N, nfar)
        top = 0.0
        change = 0.0
        for t in range(T):
            dv = abs(nfar[t] - far[t])
            if dv > change:
                change = dv
            for i in range(I):
                v = ny[t, i]
                if i < checked and v > top:
                    top = v
                dv = abs(v - y[t, i])
                if dv > change:
                    change = dv
        y, ny = ny, y
        far, nfar = nfar, far
        if top < eps:
            return True, it, y, far
        if change < slack:
            return False, it, y, far
    return False, max_iter, y, far


# --- frame-asynchronous window decoder ----------------------------------------


@njit(cache=True)
def _heap_push(h, size, v):
    i = size
    h[i] = v
    while i > 0:
        parent = (i - 1) >> 1
        if h[parent] <= h[i]:
            break
        h[parent], h[i] = h[i], h[parent]
        i = parent
    return size + 1


@njit(cache=True)
def _heap_pop(h, size):
    top = h[0]
    size -= 1
    h[0] = h[size]
    i = 0
    while True:
        a = 2 * i + 1
        if a >= size:
            break
        b = a + 1
        c = b if b < size and h[b] < h[a] else a
        if h[i] <= h[c]:
            break
        h[i], h[c] = h[c], h[i]
        i = c
    return top, size


@njit(cache=True)
def window_decode(arrival, utype, udeg, uslots, S, W, T, table, first, stop):
    """Per-class fresh-window peeling; returns a lost flag per user.

    Class ``i`` is decoded on slots ``[i, i + W - 1]`` using only the users
    that arrived there. Slots are visited left to right with a heap for
    revisits, and work stops as soon as every class-``i`` user is decoded.
    Only classes in ``[first, stop)`` are evaluated.
    """
    K = arrival.shape[0]
    lost = np.zeros(K, dtype=np.bool_)
    counts = np.zeros(S * T, dtype=np.int64)
    idsum = np.zeros(S * T, dtype=np.int64)
    dec = np.zeros(K, dtype=np.bool_)
    dmax = uslots.shape[1]
    log = np.empty(K * dmax + 1, dtype=np.int64)
    logu = np.empty(K * dmax + 1, dtype=np.int64)
    declog = np.empty(K + 1, dtype=np.int64)
    heap = np.empty(K * dmax + S + 1, dtype=np.int64)
    cap = T + 1
    lo = 0  # first user in the window
    hi = 0  # one past the last user in the window
    for i in range(first, stop):
        end = i + W
        while hi < K and arrival[hi] < end:
            for r in range(udeg[hi]):
                k = uslots[hi, r] * T + utype[hi]
                counts[k] += 1
                idsum[k] += hi
            hi += 1
        while lo < hi and arrival[lo] < i:
            for r in range(udeg[lo]):
                k = uslots[lo, r] * T + utype[lo]
                counts[k] -= 1
                idsum[k] -= lo
            lo += 1
        own = 0
        while lo + own < hi and arrival[lo + own] == i:
            own += 1
        if own == 0:
            continue
        remaining = own
        nlog = 0
        ndec = 0
        hsize = 0
        p = i
        while remaining > 0:
            if hsize > 0 and (heap[0] < p or p >= end):
                n, hsize = _heap_pop(heap, hsize)
            elif p < end:
                n = p
                p += 1
            else:
                break
            b = n * T
            idx = 0
            for t in range(T - 1, -1, -1):
                c = counts[b + t]
                idx = idx * (cap + 1) + (c if c < cap else cap)
            mask = table[idx]
            if mask == 0:
                continue
            for t in range(T):
                if not (mask >> t) & 1:
                    continue
                u = idsum[b + t]
                dec[u] = True
                declog[ndec] = u
                ndec += 1
                if arrival[u] == i:
                    remaining -= 1
                for r in range(udeg[u]):
                    m = uslots[u, r]
                    if m >= end:
                        break
                    k = m * T + t
                    counts[k] -= 1
                    idsum[k] -= u
                    log[nlog] = k
                    logu[nlog] = u
                    nlog += 1
                    if m < p and m != n:
                        hsize = _heap_push(heap, hsize, m)
            hsize = _heap_push(heap, hsize, n)
        for j in range(lo, lo + own):
            lost[j] = not dec[j]
        for e in range(nlog):
            counts[log[e]] += 1
            idsum[log[e]] += logu[e]
        for e in range(ndec):
            dec[declog[e]] = False
    return lost
