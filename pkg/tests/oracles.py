"""Independent reference computations shared by the test modules."""

import math

import numpy as np

from rcmlab.limit_sim import AtomicSpeedMeasure


def atomic_measure(x, m):
    x = np.asarray(x, dtype=float)
    return AtomicSpeedMeasure(
        x=x, mass=np.asarray(m, dtype=float), v=x.copy(), side=np.ones(x.size, dtype=np.int64), x_lo=0.0, x_hi=1.0
    )


def grid_exit_oracle(d_left, d_right, mass, delta, reps, rng):
    """Time spent at the middle atom by a grid random walk, step delta.

    Each visit to 0 adds delta of local time; after a visit the walk steps to
    +-delta and then reaches the far end before returning with the
    gambler's-ruin probability delta / distance.
    """
    p_escape = 0.5 * (delta / d_left) + 0.5 * (delta / d_right)
    visits = rng.geometric(p_escape, size=reps)
    return mass * delta * visits


def separation_probability(sites: int, rho: float, min_gap: int) -> float:
    """P(every two marked sites are more than min_gap apart).

    Sites are marked independently with probability rho.  The chain state is
    the number of sites since the last mark, capped at min_gap (free).
    """
    g = int(min_gap)
    M = np.zeros((g + 1, g + 1))
    for k in range(g):
        M[k + 1, k] = 1.0 - rho
    M[g, g] = 1.0 - rho
    M[0, g] = rho
    return float(np.linalg.matrix_power(M, sites)[:, g].sum())


def erfc_half_stable_cdf(x: float) -> float:
    # P(S <= x) for E exp(-t S) = exp(-Gamma(1/2) t^(1/2))
    return math.erfc(math.sqrt(math.pi / (4.0 * x)))
