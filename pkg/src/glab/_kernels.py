"""Compiled inner loops.

The chain is simulated by uniformisation per range: every bond of range ``k``
carries a clock of rate ``N^2 a_k max(1, 1 - s_k)`` (``s_k`` the scaled
asymmetry) and a ring is kept with probability ``jump_rate / clock``.  Kept
rings are exactly the firings of independent per-channel exponential clocks
with rate ``jump_rate``; discarded rings are not events.
"""
import numpy as np
from numba import njit

RIGHT = 1
LEFT = -1
NEUTRAL = 0


@njit(cache=True)
def _pick_range(cum, weights, u):
    m = cum.shape[0]
    r = 0
    while r < m - 1 and u >= cum[r]:
        r += 1
    while weights[r] == 0.0 and r > 0:
        r -= 1
    return r


@njit(cache=True)
def _pattern_rate(a, b, n2a, asym):
    if a == b:
        return n2a, NEUTRAL
    if a == 1:
        return n2a, RIGHT
    return n2a * (1.0 - asym), LEFT


@njit(cache=True)
def run_chain(spins, periodic, n2a, asym, horizon, seed, log_noops):
    """Simulate in place; returns event columns (time, x, k, executed, direction)."""
    np.random.seed(seed)
    n = spins.shape[0]
    m = n2a.shape[0]
    clock = np.empty(m)
    nb = np.empty(m, np.int64)
    w = np.empty(m)
    for r in range(m):
        clock[r] = n2a[r] * max(1.0, 1.0 - asym[r])
        nb[r] = n if periodic else max(n - (r + 1), 0)
        w[r] = clock[r] * nb[r]
    total = w.sum()
    cap = 1024
    times = np.empty(cap)
    xs = np.empty(cap, np.int32)
    ks = np.empty(cap, np.int16)
    ex = np.empty(cap, np.int8)
    dr = np.empty(cap, np.int8)
    count = 0
    if total <= 0.0 or horizon <= 0.0:
        return times[:0], xs[:0], ks[:0], ex[:0], dr[:0]
    cum = np.cumsum(w) / total
    cum[m - 1] = 1.0
    t = 0.0
    while True:
        t += np.random.exponential(1.0 / total)
        if t > horizon:
            break
        r = _pick_range(cum, w, np.random.random())
        k = r + 1
        x = np.random.randint(0, nb[r])
        y = x + k
        if periodic:
            y = y % n
        a = spins[x]
        b = spins[y]
        rate, d = _pattern_rate(a, b, n2a[r], asym[r])
        if rate < clock[r] and np.random.random() * clock[r] >= rate:
            continue
        executed = a != b
        if executed:
            spins[x] = b
            spins[y] = a
        if executed or log_noops:
            if count == cap:
                cap *= 2
                t2 = np.empty(cap)
                x2 = np.empty(cap, np.int32)
                k2 = np.empty(cap, np.int16)
                e2 = np.empty(cap, np.int8)
                d2 = np.empty(cap, np.int8)
                t2[:count] = times[:count]
                x2[:count] = xs[:count]
                k2[:count] = ks[:count]
                e2[:count] = ex[:count]
                d2[:count] = dr[:count]
                times, xs, ks, ex, dr = t2, x2, k2, e2, d2
            times[count] = t
            xs[count] = x
            ks[count] = k
            ex[count] = 1 if executed else 0
            dr[count] = d
            count += 1
    return times[:count], xs[:count], ks[:count], ex[:count], dr[:count]


@njit(cache=True)
def apply_events(spins, periodic, xs, ks, ex):
    n = spins.shape[0]
    for i in range(xs.shape[0]):
        if ex[i]:
            x = xs[i]
            y = x + ks[i]
            if periodic:
                y = y % n
            s = spins[x]
            spins[x] = spins[y]
            spins[y] = s
    return spins


@njit(cache=True)
def _ball_discrepancy(a, b, s, w0, lo, hi):
    return lo <= s <= hi and a[s] != b[s - w0]


@njit(cache=True)
def coupled_run(a, b, w0, n2a, asym, horizon, seed, lo, hi):
    """Two-species run; ``a`` lives on a segment, ``b`` on the torus window.

    ``b[i]`` is the spin at segment index ``w0 + i``.  Returns the first time a
    discrepancy sits inside the index ball ``[lo, hi]`` (``inf`` if none) and the
    number of clock rings.
    """
    np.random.seed(seed)
    nA = a.shape[0]
    W = b.shape[0]
    m = n2a.shape[0]
    for s in range(lo, hi + 1):
        if a[s] != b[s - w0]:
            return 0.0, 0
    # classes: 0 common, 1 segment-only, 2 window-only (wrap)
    weights = np.zeros(3 * m)
    clock = np.empty(m)
    for r in range(m):
        k = r + 1
        clock[r] = n2a[r] * max(1.0, 1.0 - asym[r])
        common = max(W - k, 0)
        weights[3 * r] = clock[r] * common
        weights[3 * r + 1] = clock[r] * (max(nA - k, 0) - common)
        weights[3 * r + 2] = clock[r] * min(k, W)
    total = weights.sum()
    if total <= 0.0 or horizon <= 0.0:
        return np.inf, 0
    cum = np.cumsum(weights) / total
    cum[3 * m - 1] = 1.0
    t = 0.0
    rings = 0
    while True:
        t += np.random.exponential(1.0 / total)
        if t > horizon:
            return np.inf, rings
        rings += 1
        c = _pick_range(cum, weights, np.random.random())
        r = c // 3
        cls = c % 3
        k = r + 1
        u = np.random.random() * clock[r]
        if cls == 0:
            x = w0 + np.random.randint(0, W - k)
            y = x + k
            ra, _ = _pattern_rate(a[x], a[y], n2a[r], asym[r])
            rb, _ = _pattern_rate(b[x - w0], b[y - w0], n2a[r], asym[r])
            if u < ra:
                s = a[x]
                a[x] = a[y]
                a[y] = s
            if u < rb:
                s = b[x - w0]
                b[x - w0] = b[y - w0]
                b[y - w0] = s
            if _ball_discrepancy(a, b, x, w0, lo, hi) or _ball_discrepancy(a, b, y, w0, lo, hi):
                return t, rings
        elif cls == 1:
            # segment-only bonds: left part then right part of the segment
            left = max(min(w0, nA - k), 0)
            j = np.random.randint(0, max(nA - k, 0) - max(W - k, 0))
            if j < left:
                x = j
            else:
                x = w0 + max(W - k, 0) + (j - left)
            y = x + k
            ra, _ = _pattern_rate(a[x], a[y], n2a[r], asym[r])
            if u < ra and a[x] != a[y]:
                s = a[x]
                a[x] = a[y]
                a[y] = s
                if w0 <= x < w0 + W and _ball_discrepancy(a, b, x, w0, lo, hi):
                    return t, rings
                if w0 <= y < w0 + W and _ball_discrepancy(a, b, y, w0, lo, hi):
                    return t, rings
        else:
            i = W - min(k, W) + np.random.randint(0, min(k, W))
            jdx = (i + k) % W
            rb, _ = _pattern_rate(b[i], b[jdx], n2a[r], asym[r])
            if u < rb and b[i] != b[jdx]:
                s = b[i]
                b[i] = b[jdx]
                b[jdx] = s
                if _ball_discrepancy(a, b, w0 + i, w0, lo, hi) or _ball_discrepancy(a, b, w0 + jdx, w0, lo, hi):
                    return t, rings


@njit(cache=True)
def replay_height(spins, periodic, origin, h, xs, ks, ex, dr, inv_sqrt_n, lam, check_every, tol):
    """Replay executed events while maintaining heights incrementally.

    ``h[i]`` is the height on the edge ``(i, i+1)``.  After each event the
    increment identity is checked on the touched sites, and every
    ``check_every`` events the whole profile and ``log Z`` are recomputed from
    the flux counter and spin partial sums.  Returns
    ``(violations, max identity error, max log Z discrepancy, flux)``.
    """
    n = spins.shape[0]
    logz = -lam * h
    flux = 0
    violations = 0
    worst_inc = 0.0
    worst_logz = 0.0
    step = 2.0 * inv_sqrt_n
    for e in range(xs.shape[0]):
        if not ex[e]:
            continue
        x = xs[e]
        k = ks[e]
        d = dr[e]
        for q in range(k):
            edge = x + q
            if periodic:
                edge = edge % n
            h[edge] -= d * step
            logz[edge] += d * lam * step
            if edge == origin:
                flux -= d
        y = x + k
        if periodic:
            y = y % n
        s = spins[x]
        spins[x] = spins[y]
        spins[y] = s
        for q in range(k + 1):
            site = x + q
            if periodic:
                site = site % n
            if site == 0 or site >= n:
                continue
            err = abs(h[site] - h[site - 1] - spins[site] * inv_sqrt_n)
            if err > worst_inc:
                worst_inc = err
            if err > tol:
                violations += 1
        if check_every > 0 and (e + 1) % check_every == 0:
            wz = _recompute_check(spins, origin, h, logz, flux, inv_sqrt_n, lam)
            if wz > worst_logz:
                worst_logz = wz
    wz = _recompute_check(spins, origin, h, logz, flux, inv_sqrt_n, lam)
    if wz > worst_logz:
        worst_logz = wz
    return violations, worst_inc, worst_logz, flux


@njit(cache=True)
def _recompute_check(spins, origin, h, logz, flux, inv_sqrt_n, lam):
    n = spins.shape[0]
    fresh = np.empty(n)
    fresh[origin] = 2.0 * inv_sqrt_n * flux
    acc = fresh[origin]
    for i in range(origin + 1, n):
        acc += inv_sqrt_n * spins[i]
        fresh[i] = acc
    acc = fresh[origin]
    for i in range(origin, 0, -1):
        acc -= inv_sqrt_n * spins[i]
        fresh[i - 1] = acc
    worst = 0.0
    for i in range(n):
        dz = abs(logz[i] + lam * fresh[i])
        dh = abs(h[i] - fresh[i])
        if dz > worst:
            worst = dz
        if dh > worst:
            worst = dh
    return worst


@njit(cache=True)
def functional_paths(spins, periodic, times, xs, ks, ex, sites, table, horizon):
    """Piecewise-constant paths of window averages of a table functional.

    ``sites`` has shape ``(P, J, w)``: P windows, each the average of J
    translates of a width-``w`` functional.  Returns ``(t, v, start)`` where the
    path of window ``p`` is ``t[start[p]:start[p+1]]`` / ``v[...]`` (value on
    ``[t_i, t_{i+1})``).
    """
    n = spins.shape[0]
    P, J, w = sites.shape
    # site -> windows touching it
    counts = np.zeros(n + 1, np.int64)
    for p in range(P):
        for j in range(J):
            for q in range(w):
                counts[sites[p, j, q] + 1] += 1
    ptr = np.cumsum(counts)
    owners = np.empty(ptr[n], np.int64)
    fill = ptr[:n].copy()
    for p in range(P):
        for j in range(J):
            for q in range(w):
                s = sites[p, j, q]
                owners[fill[s]] = p
                fill[s] += 1
    cur = np.empty(P)
    for p in range(P):
        cur[p] = _window_value(spins, sites, table, p)
    cap = 16 * P + 16
    pt = np.empty(cap)
    pv = np.empty(cap)
    pw = np.empty(cap, np.int64)
    cnt = 0
    for p in range(P):
        pt[cnt] = 0.0
        pv[cnt] = cur[p]
        pw[cnt] = p
        cnt += 1
    for e in range(xs.shape[0]):
        if times[e] > horizon:
            break
        if not ex[e]:
            continue
        x = xs[e]
        y = x + ks[e]
        if periodic:
            y = y % n
        s = spins[x]
        spins[x] = spins[y]
        spins[y] = s
        for side in range(2):
            site = x if side == 0 else y
            for o in range(ptr[site], ptr[site + 1]):
                p = owners[o]
                val = _window_value(spins, sites, table, p)
                if val != cur[p]:
                    cur[p] = val
                    if cnt == cap:
                        cap *= 2
                        t2 = np.empty(cap)
                        v2 = np.empty(cap)
                        w2 = np.empty(cap, np.int64)
                        t2[:cnt] = pt[:cnt]
                        v2[:cnt] = pv[:cnt]
                        w2[:cnt] = pw[:cnt]
                        pt, pv, pw = t2, v2, w2
                    pt[cnt] = times[e]
                    pv[cnt] = val
                    pw[cnt] = p
                    cnt += 1
    order = np.argsort(pw[:cnt], kind="mergesort")
    start = np.zeros(P + 1, np.int64)
    for i in range(cnt):
        start[pw[i] + 1] += 1
    start = np.cumsum(start)
    return pt[:cnt][order], pv[:cnt][order], start


@njit(cache=True)
def _window_value(spins, sites, table, p):
    J = sites.shape[1]
    w = sites.shape[2]
    acc = 0.0
    for j in range(J):
        code = 0
        for q in range(w):
            if spins[sites[p, j, q]] == 1:
                code |= 1 << q
        acc += table[code]
    return acc / J


@njit(cache=True)
def height_snapshots(spins, periodic, origin, h, times, xs, ks, ex, dr, inv_sqrt_n, grid):
    """Height profiles at the sorted times in ``grid`` (value just after all events
    at or before each grid time).  Mutates ``spins`` and ``h``."""
    n = spins.shape[0]
    out = np.empty((grid.shape[0], n))
    step = 2.0 * inv_sqrt_n
    g = 0
    e = 0
    ne = xs.shape[0]
    while g < grid.shape[0]:
        while e < ne and times[e] <= grid[g]:
            if ex[e]:
                x = xs[e]
                k = ks[e]
                d = dr[e]
                for q in range(k):
                    edge = x + q
                    if periodic:
                        edge = edge % n
                    h[edge] -= d * step
                y = x + k
                if periodic:
                    y = y % n
                s = spins[x]
                spins[x] = spins[y]
                spins[y] = s
            e += 1
        out[g, :] = h
        g += 1
    return out
