"""Exit laws of a reflected birth-death block from its symmetrised generator.

The generator of the walk killed on leaving a block of sites is similar to a
symmetric tridiagonal matrix.  An implicit QL sweep diagonalises it while
carrying only the handful of eigenvector rows that the exit-time law needs,
which costs O(N^2) instead of O(N^3).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_EPS = 2.220446049250313e-16


@njit(cache=True)
def tql_rows(d, e, rows):
    """Diagonalise the symmetric tridiagonal (d, e) in place.

    Args:
        d: diagonal, overwritten by the eigenvalues.
        e: off-diagonal, e[i] couples i and i+1; length len(d) (last unused).
        rows: (r, N) array of row vectors v, overwritten by v @ Z where Z
            holds the eigenvectors in its columns.

    Returns:
        False if the iteration failed to converge.
    """
    n = d.shape[0]
    nr = rows.shape[0]
    e[n - 1] = 0.0
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= _EPS * dd:
                    break
                m += 1
            if m == l:
                break
            it += 1
            if it > 60:
                return False
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = 1.0
            c = 1.0
            p = 0.0
            i = m - 1
            underflow = False
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                for k in range(nr):
                    f2 = rows[k, i + 1]
                    rows[k, i + 1] = s * rows[k, i] + c * f2
                    rows[k, i] = c * rows[k, i] - s * f2
                i -= 1
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return True


@njit(cache=True)
def block_operator(c, lo, hi):
    """Symmetrised killed generator on sites lo..hi of a reflected chain.

    ``c[i]`` is the conductance of edge (i, i+1) for sites 0..len(c).
    Returns (diag, offdiag, site weights).
    """
    L = c.shape[0]
    N = hi - lo + 1
    w = np.empty(N)
    for j in range(N):
        y = lo + j
        s = 0.0
        if y > 0:
            s += c[y - 1]
        if y < L:
            s += c[y]
        w[j] = s
    d = -np.ones(N)
    e = np.zeros(N)
    for j in range(N - 1):
        # split square roots: w[j] * w[j + 1] overflows for huge conductances
        e[j] = c[lo + j] / math.sqrt(w[j]) / math.sqrt(w[j + 1])
    return d, e, w


@njit(cache=True)
def block_exit_modes(c, lo, hi, x):
    """Modal coefficients of the exit law of the block lo..hi started at x.

    Returns (lam, a, fl, fr, ok) sorted from slowest mode, such that
    P(T > t) = sum a_k exp(lam_k t) and the exit densities through the left
    and right ends are sum fl_k exp(lam_k t) and sum fr_k exp(lam_k t).
    """
    L = c.shape[0]
    d, e, w = block_operator(c, lo, hi)
    N = hi - lo + 1
    rows = np.zeros((4, N))
    jx = x - lo
    rows[0, jx] = 1.0
    rows[1, 0] = 1.0
    rows[2, N - 1] = 1.0
    for j in range(N):
        rows[3, j] = math.sqrt(w[j])
    ok = tql_rows(d, e, rows)
    kl = c[lo - 1] / w[0] if lo > 0 else 0.0
    kr = c[hi] / w[N - 1] if hi < L else 0.0
    sx = math.sqrt(w[jx])
    order = np.argsort(-d)
    lam = np.empty(N)
    a = np.empty(N)
    fl = np.empty(N)
    fr = np.empty(N)
    for idx in range(N):
        k = order[idx]
        lam[idx] = d[k]
        a[idx] = rows[0, k] * rows[3, k] / sx
        fl[idx] = rows[0, k] * rows[1, k] * math.sqrt(w[0]) / sx * kl
        fr[idx] = rows[0, k] * rows[2, k] * math.sqrt(w[N - 1]) / sx * kr
    return lam, a, fl, fr, ok


@njit(cache=True)
def block_transition_row(c, lo, hi, x, t):
    """Sub-probability vector P_x(X_t = z, T > t) for z in lo..hi (full diagonalisation)."""
    d, e, w = block_operator(c, lo, hi)
    N = hi - lo + 1
    rows = np.eye(N)
    tql_rows(d, e, rows)
    jx = x - lo
    out = np.zeros(N)
    for k in range(N):
        if d[k] * t < -745.0:
            continue
        g = math.exp(d[k] * t) * rows[jx, k]
        for j in range(N):
            out[j] += g * rows[j, k]
    sx = math.sqrt(w[jx])
    for j in range(N):
        out[j] *= math.sqrt(w[j]) / sx
        if out[j] < 0.0:
            out[j] = 0.0
    return out


@njit(cache=True)
def modal_sum(lam, coef, tail, t, tol):
    """sum coef_k exp(lam_k t), truncated once the remaining bound is below tol."""
    s = 0.0
    for k in range(lam.shape[0]):
        ek = lam[k] * t
        if ek < -745.0:
            break
        g = math.exp(ek)
        if tail[k] * g < tol:
            break
        s += coef[k] * g
    return s


@njit(cache=True)
def modal_sum_deriv(lam, coef, tail, t, tol):
    s = 0.0
    ds = 0.0
    for k in range(lam.shape[0]):
        ek = lam[k] * t
        if ek < -745.0:
            break
        g = math.exp(ek)
        if tail[k] * g < tol:
            break
        s += coef[k] * g
        ds += coef[k] * lam[k] * g
    return s, ds


@njit(cache=True)
def sample_exit_time(lam, a, tail, u):
    """Solve P(T > t) = u by safeguarded Newton iteration on log P(T > t)."""
    tol = 1e-15 * u
    lu = math.log(u)
    lo = 0.0
    # slowest mode gives the asymptotic inverse as a starting bracket
    hi = (lu - math.log(max(a[0], 1e-300))) / lam[0]
    if hi <= 0.0:
        hi = 1.0 / abs(lam[0])
    while modal_sum(lam, a, tail, hi, tol) > u:
        lo = hi
        hi *= 2.0
    t = 0.5 * (lo + hi)
    for _ in range(200):
        f, df = modal_sum_deriv(lam, a, tail, t, tol)
        if f > u:
            lo = t
        else:
            hi = t
        if hi - lo <= 1e-13 * hi:
            break
        tn = -1.0
        if f > 0.0 and df < 0.0:
            tn = t - (math.log(f) - lu) * f / df
        if not (lo < tn < hi):
            tn = 0.5 * (lo + hi)
        if abs(tn - t) <= 1e-14 * t:
            t = tn
            break
        t = tn
    return t


def exit_modes(c: np.ndarray, lo: int, hi: int, x: int):
    """Python entry point to the modal exit law, mainly for tests."""
    return block_exit_modes(np.ascontiguousarray(c, dtype=float), lo, hi, x)
