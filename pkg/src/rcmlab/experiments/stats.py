"""Two-sample KS distance and binomial intervals."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats


def ks_distance(a, b) -> float:
    """sup |F_a - F_b| over the pooled sample."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    pts = np.concatenate((a, b))
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval (95% by default)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 0 <= successes <= trials:
        raise ValueError("successes outside [0, trials]")
    p = successes / trials
    z2 = z * z
    centre = (p + z2 / (2 * trials)) / (1 + z2 / trials)
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / (1 + z2 / trials)
    return max(0.0, centre - half), min(1.0, centre + half)


def proportion(successes: int, trials: int) -> tuple[float, float, tuple[float, float]]:
    """Point estimate, binomial standard error and Wilson interval."""
    p = successes / trials
    se = math.sqrt(p * (1 - p) / trials)
    return p, se, wilson_interval(successes, trials)


def mean_interval(values) -> tuple[float, float, tuple[float, float]]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty sample")
    m = math.fsum(v) / v.size
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return m, se, (m - 1.96 * se, m + 1.96 * se)


def ks_pvalue(a, b) -> float:
    """Two-sample KS p-value (exact or asymptotic as scipy decides)."""
    return float(stats.ks_2samp(a, b).pvalue)
