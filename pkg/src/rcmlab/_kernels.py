"""Compiled event loop for the continuous-time walk on a reflected box.

Sites are indexed 0..L and edge i joins sites i and i+1.  Three move types
share one loop:

* micro steps: Exp(1) holding, then a nearest-neighbour jump;
* trap collapse: the whole stay inside a strong two-site pair, sampled as a
  geometric number of back-and-forth cycles with a Gamma total time;
* macro steps: exit from a block of 2m-1 sites around a lattice centre,
  sampled from the modal expansion of the killed generator.

Each shortcut is exact in law.  When an observation time falls inside a
pending shortcut, the position at that time is drawn from its conditional law
and the walk restarts there.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from ._spectral import block_exit_modes, block_transition_row, modal_sum, sample_exit_time

KIND_START = 0
KIND_MICRO = 1
KIND_COLLAPSE = 2
KIND_MACRO = 3
KIND_OBS = 4


class MacroCache:
    """Per-environment storage for lazily computed block exit laws."""

    def __init__(self, L: int, m: int):
        self.m = m
        centres = L // m + 1 if m > 0 else 1
        width = max(2 * m - 1, 1)
        self.lam = np.zeros((centres, width))
        self.a = np.zeros((centres, width))
        self.tail = np.zeros((centres, width))
        self.fl = np.zeros((centres, width))
        self.fr = np.zeros((centres, width))
        self.size = np.zeros(centres, dtype=np.int64)
        self.done = np.zeros(centres, dtype=np.bool_)


@njit(cache=True)
def _site_weight(c, y):
    L = c.shape[0]
    s = 0.0
    if y > 0:
        s += c[y - 1]
    if y < L:
        s += c[y]
    return s


@njit(cache=True)
def _block_bounds(x, m, L):
    """Transient block for a macro step from centre x, or (-1, -1)."""
    if x == 0:
        if m <= L:
            return 0, m - 1
        return -1, -1
    if x == L:
        if L - m >= 0:
            return L - m + 1, L
        return -1, -1
    if x - m >= 0 and x + m <= L:
        return x - m + 1, x + m - 1
    return -1, -1


# eigenvalues carry absolute error ~1e-16, so slower block exits are unreliable
_MIN_BLOCK_RATE = 1e-9


@njit(cache=True)
def _ensure_block(c, k, m, lo, hi, x, lam_s, a_s, tail_s, fl_s, fr_s, size_s, done_s):
    if done_s[k]:
        return
    lam, a, fl, fr, ok = block_exit_modes(c, lo, hi, x)
    N = lam.shape[0]
    done_s[k] = True
    if not ok or not lam[0] <= -_MIN_BLOCK_RATE or not np.all(np.isfinite(a)):
        # slowest rate lost in rounding or overflow (a very deep trap inside):
        # no macro steps from this centre
        size_s[k] = 0
        return
    acc = 0.0
    for i in range(N - 1, -1, -1):
        acc += abs(a[i])
        tail_s[k, i] = acc
    for i in range(N):
        lam_s[k, i] = lam[i]
        a_s[k, i] = a[i]
        fl_s[k, i] = fl[i]
        fr_s[k, i] = fr[i]
    size_s[k] = N


@njit(cache=True)
def _sample_index(p, u):
    tot = 0.0
    for i in range(p.shape[0]):
        tot += p[i]
    target = u * tot
    acc = 0.0
    for i in range(p.shape[0]):
        acc += p[i]
        if acc > target:
            return i
    return p.shape[0] - 1


# below this escape probability a cycle count may overflow int64
_TINY_ESCAPE = 1e-15


@njit(cache=True)
def _outer_edge(c, y, pa, L):
    """Conductance of the edge at site y other than the pair edge pa."""
    if y == pa:
        return c[pa - 1] if pa > 0 else 0.0
    return c[pa + 1] if pa + 1 < L else 0.0


@njit(cache=True)
def _collapse_draw(pe, out_f, rng):
    """Jump count, duration and exit side of one collapsed stay in a pair.

    The count is 2g + 1 (exit from the first site) or 2g + 2 with g geometric
    on {0, 1, ...}; the duration is Gamma(count) for unit-rate holding times.
    For astronomically deep traps both are drawn in floating point, the
    duration from the normal approximation of the gamma law.
    """
    if pe <= 0.0:
        # closed pair: never leaves
        return math.inf, math.inf, rng.random() < 0.5
    if pe >= _TINY_ESCAPE:
        g = float(rng.geometric(pe) - 1)
    else:
        # np.floor stays in floating point; the count can exceed int64
        g = np.floor(math.log(1.0 - rng.random()) / math.log1p(-pe))
    exit_first = rng.random() * pe < out_f
    kk = 2.0 * g + 1.0 if exit_first else 2.0 * g + 2.0
    if pe >= _TINY_ESCAPE:
        T = rng.standard_gamma(kk)
    else:
        T = kk + math.sqrt(kk) * rng.standard_normal()
    return kk, T, exit_first


@njit(cache=True)
def _jumps_within(kk, T, dt, rng):
    """How many of the kk - 1 inner jumps of a stay of length T fall in [0, dt]."""
    if kk <= 1.0:
        return 0.0
    if not math.isfinite(T):
        return float(rng.poisson(dt))
    if kk < 1e15:
        return float(rng.binomial(np.int64(kk - 1.0), dt / T))
    mean = (kk - 1.0) * dt / T
    if mean < 1e6:
        return float(rng.poisson(mean))
    return float(round(mean + math.sqrt(mean * (1.0 - dt / T)) * rng.standard_normal()))


@njit(cache=True)
def run_walk(
    c,
    x0,
    obs,
    macro_m,
    max_tracking,
    collapse_thr,
    stop_lo,
    stop_hi,
    ref_obs,
    stop_after_exceed,
    record_cap,
    rng,
    lam_s,
    a_s,
    tail_s,
    fl_s,
    fr_s,
    size_s,
    done_s,
):
    """Simulate one walk until the last observation time (or a stop site).

    Args:
        c: edge conductances (already tilted), edge i joins sites i, i+1.
        x0: start site in 0..len(c).
        obs: sorted observation times; the last one is the horizon.
        macro_m: block half-width for macro steps (0 disables them).
        max_tracking: only use macro blocks lying below the running maximum.
        collapse_thr: pair-strength ratio for trap collapse (0 disables it).
        stop_lo, stop_hi: absorbing sites (-1 for none).
        ref_obs: index of the observation that starts hit/exceed tracking of
            the running maximum (-1 for none).
        stop_after_exceed: stop once the tracked maximum is exceeded.
        record_cap: capacity of the event record (0 records nothing).
        rng: numpy Generator.
        lam_s .. done_s: MacroCache arrays.

    Returns:
        A tuple of observation arrays, tracking times, counters and the
        event record; see walk_sim.simulate_walk for the unpacking.
    """
    L = c.shape[0]
    nobs = obs.shape[0]
    pos_obs = np.full(nobs, -1, dtype=np.int64)
    max_obs = np.full(nobs, -1, dtype=np.int64)
    rec_t = np.empty(record_cap)
    rec_x = np.empty(record_cap, dtype=np.int64)
    rec_k = np.empty(record_cap, dtype=np.int8)
    col_cap = record_cap // 2 + 1 if record_cap > 0 else 0
    col_t0 = np.empty(col_cap)
    col_t1 = np.empty(col_cap)
    col_a = np.empty(col_cap, dtype=np.int64)
    col_v = np.empty(col_cap)
    n_rec = 0
    n_col = 0
    overflow = False

    x = x0
    t = 0.0
    comp = 0.0
    xbar = x0
    j = 0
    n_micro = 0
    n_macro = 0
    n_collapse = 0
    m_ref = -1
    hit_time = -1.0
    exceed_time = -1.0
    tracking = False
    stopped = False

    if record_cap > 0:
        rec_t[0] = 0.0
        rec_x[0] = x0
        rec_k[0] = KIND_START
        n_rec = 1

    while j < nobs:
        if stop_lo >= 0 and (x == stop_lo or x == stop_hi):
            stopped = True
            break
        if stop_after_exceed and exceed_time >= 0.0:
            break

        # ---- macro step
        if macro_m > 0 and x % macro_m == 0:
            lo, hi = _block_bounds(x, macro_m, L)
            allowed = lo >= 0 and stop_lo < 0
            if allowed and max_tracking:
                if hi < L:
                    allowed = hi + 1 <= xbar
                else:
                    allowed = xbar == L
            if allowed:
                k = x // macro_m
                _ensure_block(c, k, macro_m, lo, hi, x, lam_s, a_s, tail_s, fl_s, fr_s, size_s, done_s)
                allowed = size_s[k] > 0
            if allowed:
                N = size_s[k]
                lam = lam_s[k, :N]
                a = a_s[k, :N]
                tail = tail_s[k, :N]
                u = 1.0 - rng.random()
                T = sample_exit_time(lam, a, tail, u)
                if t + T > obs[j]:
                    dt = obs[j] - t
                    row = block_transition_row(c, lo, hi, x, dt)
                    z = lo + _sample_index(row, rng.random())
                    t = obs[j]
                    comp = 0.0
                    x = z
                    if x > xbar:
                        xbar = x
                    pos_obs[j] = x
                    max_obs[j] = xbar
                    if j == ref_obs:
                        tracking = True
                        m_ref = xbar
                        if x == m_ref:
                            hit_time = t
                    elif tracking:
                        if hit_time < 0.0 and x == m_ref:
                            hit_time = t
                        if exceed_time < 0.0 and x > m_ref:
                            exceed_time = t
                    j += 1
                    if record_cap > 0:
                        if n_rec < record_cap:
                            rec_t[n_rec] = t
                            rec_x[n_rec] = x
                            rec_k[n_rec] = KIND_OBS
                            n_rec += 1
                        else:
                            overflow = True
                    n_macro += 1
                    continue
                fr = 0.0
                fl = 0.0
                tol = 0.0
                if hi < L:
                    fr = modal_sum(lam, fr_s[k, :N], tail, T, tol)
                if lo > 0:
                    fl = modal_sum(lam, fl_s[k, :N], tail, T, tol)
                if fr < 0.0:
                    fr = 0.0
                if fl < 0.0:
                    fl = 0.0
                if hi == L:
                    x = lo - 1
                elif lo == 0:
                    x = hi + 1
                elif rng.random() * (fr + fl) < fr:
                    x = hi + 1
                else:
                    x = lo - 1
                y = T - comp
                s = t + y
                comp = (s - t) - y
                t = s
                if x > xbar:
                    xbar = x
                if tracking:
                    if hit_time < 0.0 and x == m_ref:
                        hit_time = t
                    if exceed_time < 0.0 and x > m_ref:
                        exceed_time = t
                n_macro += 1
                if record_cap > 0:
                    if n_rec < record_cap:
                        rec_t[n_rec] = t
                        rec_x[n_rec] = x
                        rec_k[n_rec] = KIND_MACRO
                        n_rec += 1
                    else:
                        overflow = True
                continue

        # ---- trap collapse
        if collapse_thr > 0.0:
            pa = -1
            if x < L:
                cm = c[x]
                oa = c[x - 1] if x > 0 else 0.0
                ob = c[x + 1] if x + 1 < L else 0.0
                big = max(oa, ob)
                if big > 0.0 and cm >= collapse_thr * big:
                    pa = x
            if pa < 0 and x > 0:
                cm = c[x - 1]
                oa = c[x - 2] if x > 1 else 0.0
                ob = c[x] if x < L else 0.0
                big = max(oa, ob)
                if big > 0.0 and cm >= collapse_thr * big:
                    pa = x - 1
            if pa >= 0 and stop_lo >= 0:
                if pa == stop_lo or pa == stop_hi or pa + 1 == stop_lo or pa + 1 == stop_hi:
                    pa = -1
            if pa >= 0:
                first = x
                second = pa + 1 if x == pa else pa
                cm = c[pa]
                wf = _site_weight(c, first)
                ws = _site_weight(c, second)
                # from the outer edges directly: wf - cm cancels when cm is huge
                out_f = _outer_edge(c, first, pa, L) / wf
                out_s = _outer_edge(c, second, pa, L) / ws
                qf = cm / wf
                pe = out_f + qf * out_s
                kk, T, exit_first = _collapse_draw(pe, out_f, rng)
                dirn = 1 if second > first else -1
                if t + T > obs[j]:
                    dt = obs[j] - t
                    jumps = _jumps_within(kk, T, dt, rng)
                    z = first if jumps % 2 == 0 else second
                    seen_second = jumps >= 1
                    h1 = 0.0
                    if seen_second:
                        # first of `jumps` uniform break points on [0, dt]
                        h1 = dt * rng.beta(1.0, float(jumps))
                    if n_col < col_cap:
                        col_t0[n_col] = t
                        col_t1[n_col] = obs[j]
                        col_a[n_col] = pa
                        col_v[n_col] = t + h1 if seen_second else -1.0
                        n_col += 1
                    if seen_second:
                        if second > xbar:
                            xbar = second
                        if tracking:
                            if hit_time < 0.0 and second == m_ref:
                                hit_time = t + h1
                            if exceed_time < 0.0 and second > m_ref:
                                exceed_time = t + h1
                    t = obs[j]
                    comp = 0.0
                    x = z
                    pos_obs[j] = x
                    max_obs[j] = xbar
                    if j == ref_obs:
                        tracking = True
                        m_ref = xbar
                        if x == m_ref:
                            hit_time = t
                    j += 1
                    n_collapse += 1
                    if record_cap > 0:
                        if n_rec < record_cap:
                            rec_t[n_rec] = t
                            rec_x[n_rec] = x
                            rec_k[n_rec] = KIND_OBS
                            n_rec += 1
                        else:
                            overflow = True
                    continue
                h1 = -1.0
                if kk >= 2:
                    h1 = T * rng.beta(1.0, float(kk - 1)) if kk > 2 else T * rng.random()
                    if second > xbar:
                        xbar = second
                    if tracking:
                        if hit_time < 0.0 and second == m_ref:
                            hit_time = t + h1
                        if exceed_time < 0.0 and second > m_ref:
                            exceed_time = t + h1
                if exit_first:
                    x = first - dirn
                else:
                    x = second + dirn
                if n_col < col_cap:
                    col_t0[n_col] = t
                    col_a[n_col] = pa
                    col_v[n_col] = t + h1 if h1 >= 0.0 else -1.0
                y = T - comp
                s = t + y
                comp = (s - t) - y
                t = s
                if n_col < col_cap:
                    col_t1[n_col] = t
                    n_col += 1
                if x > xbar:
                    xbar = x
                if tracking:
                    if hit_time < 0.0 and x == m_ref:
                        hit_time = t
                    if exceed_time < 0.0 and x > m_ref:
                        exceed_time = t
                n_collapse += 1
                if record_cap > 0:
                    if n_rec < record_cap:
                        rec_t[n_rec] = t
                        rec_x[n_rec] = x
                        rec_k[n_rec] = KIND_COLLAPSE
                        n_rec += 1
                    else:
                        overflow = True
                continue

        # ---- micro step
        hold = rng.standard_exponential()
        while j < nobs and t + hold > obs[j]:
            pos_obs[j] = x
            max_obs[j] = xbar
            if j == ref_obs:
                tracking = True
                m_ref = xbar
                if x == m_ref:
                    hit_time = obs[j]
            j += 1
        if j >= nobs:
            break
        y = hold - comp
        s = t + y
        comp = (s - t) - y
        t = s
        cl = c[x - 1] if x > 0 else 0.0
        cr = c[x] if x < L else 0.0
        if rng.random() * (cl + cr) < cr:
            x += 1
        else:
            x -= 1
        n_micro += 1
        if x > xbar:
            xbar = x
        if tracking:
            if hit_time < 0.0 and x == m_ref:
                hit_time = t
            if exceed_time < 0.0 and x > m_ref:
                exceed_time = t
        if record_cap > 0:
            if n_rec < record_cap:
                rec_t[n_rec] = t
                rec_x[n_rec] = x
                rec_k[n_rec] = KIND_MICRO
                n_rec += 1
            else:
                overflow = True

    return (
        pos_obs,
        max_obs,
        x,
        t,
        xbar,
        stopped,
        hit_time,
        exceed_time,
        n_micro,
        n_macro,
        n_collapse,
        rec_t[:n_rec],
        rec_x[:n_rec],
        rec_k[:n_rec],
        overflow,
        col_t0[:n_col],
        col_t1[:n_col],
        col_a[:n_col],
        col_v[:n_col],
    )


@njit(cache=True)
def pair_escape(c, x, rng):
    """Time until a walk started at x has visited three distinct sites.

    The first jump picks the pair; the rest is the exact exit law of that
    pair.  Returns (escape time, time of the first jump, partner site, exit site).
    """
    L = c.shape[0]
    cl = c[x - 1] if x > 0 else 0.0
    cr = c[x] if x < L else 0.0
    t1 = rng.standard_exponential()
    second = x + 1 if rng.random() * (cl + cr) < cr else x - 1
    pa = min(x, second)
    cm = c[pa]
    first = second
    other = x
    wf = _site_weight(c, first)
    ws = _site_weight(c, other)
    out_f = _outer_edge(c, first, pa, L) / wf
    out_s = _outer_edge(c, other, pa, L) / ws
    qf = cm / wf
    pe = out_f + qf * out_s
    if pe <= 0.0:
        return math.inf, t1, second, -1
    _, T, exit_first = _collapse_draw(pe, out_f, rng)
    dirn = 1 if other > first else -1
    ex = first - dirn if exit_first else other + dirn
    return t1 + T, t1, second, ex


@njit(cache=True)
def exit_batch(c, x0, stop_lo, stop_hi, collapse_thr, reps, rng):
    """Exit times and exit sites of `reps` walks from x0 absorbed at stop_lo, stop_hi."""
    obs = np.array([np.inf])
    z = np.zeros((1, 1))
    zi = np.zeros(1, dtype=np.int64)
    zb = np.zeros(1, dtype=np.bool_)
    times = np.empty(reps)
    sites = np.empty(reps, dtype=np.int64)
    for i in range(reps):
        out = run_walk(c, x0, obs, 0, False, collapse_thr, stop_lo, stop_hi, -1, False, 0, rng, z, z, z, z, z, zi, zb)
        times[i] = out[3]
        sites[i] = out[2]
    return times, sites
