"""Quasi-diffusions on atomic speed measures: the scaling limits of the walk.

Brownian motion in resistance coordinates, time-changed by an atomic speed
measure, moves from atom to atom like a birth-death chain.  From atom i it
leaves after an exponential time with mean m_i * G_i, where G_i is the Green
value at the atom of the interval spanned by its neighbours, and it exits to
the nearer neighbour with the gambler's-ruin probability.  Local times never
appear explicitly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .heavy_tails import DefaultLaw, ModelParams, SubordinatorPath, sample_subordinator


@dataclass(frozen=True)
class AtomicSpeedMeasure:
    """Atoms at resistance positions x with masses m and spatial preimages v.

    ``side`` is +1 when the atom sits at S(v) and -1 when it sits at the left
    limit S(v-) of a jump at v.  ``weights`` holds the untilted trap weights
    in the traps case.
    """

    x: np.ndarray
    mass: np.ndarray
    v: np.ndarray
    side: np.ndarray
    x_lo: float
    x_hi: float
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.x.size == 0:
            raise ValueError("empty measure")
        if self.x.size > 1 and np.any(np.diff(self.x) <= 0):
            raise ValueError("atom positions must be strictly increasing")
        if np.any(self.mass <= 0):
            raise ValueError("masses must be positive")
        if self.x.size > 1 and np.any(np.diff(self.v) < 0):
            raise ValueError("preimages must be nondecreasing")

    @property
    def size(self) -> int:
        return int(self.x.size)

    def total_mass(self) -> float:
        return float(self.mass.sum())

    def holding_means(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean holding time and left-exit probability at every atom."""
        x, m = self.x, self.mass
        N = x.size
        hold = np.empty(N)
        pleft = np.empty(N)
        if N == 1:
            # nothing to exit to: the walk is stuck
            return np.array([math.inf]), np.array([0.5])
        dm = np.diff(x)
        d_minus = np.concatenate(([math.nan], dm))
        d_plus = np.concatenate((dm, [math.nan]))
        inner = slice(1, N - 1)
        dl, dr = d_minus[inner], d_plus[inner]
        hold[inner] = m[inner] * 2.0 * dl * dr / (dl + dr)
        pleft[inner] = dr / (dl + dr)
        # reflecting ends: one-sided Green value, forced inward jump
        hold[0] = m[0] * 2.0 * d_plus[0]
        pleft[0] = 0.0
        hold[-1] = m[-1] * 2.0 * d_minus[-1]
        pleft[-1] = 1.0
        return hold, pleft

    def index_of_preimage(self, v: float) -> int:
        """Atom whose preimage is v (side +1)."""
        hits = np.flatnonzero((self.v == v) & (self.side == 1))
        if hits.size != 1:
            raise ValueError(f"no unique atom with preimage {v}")
        return int(hits[0])

    def to_json(self) -> str:
        return json.dumps(
            {
                "x_lo": self.x_lo,
                "x_hi": self.x_hi,
                "atoms": [
                    {"v": float(a), "x": float(b), "mass": float(c)} for a, b, c in zip(self.v, self.x, self.mass)
                ],
            }
        )


def _voronoi_mass(v: np.ndarray, K: float, lam: float) -> np.ndarray:
    """Integral of exp(2 lam s) over the cell of each grid point in [-K, K]."""
    mid = 0.5 * (v[1:] + v[:-1])
    lo = np.concatenate(([-K], mid))
    hi = np.concatenate((mid, [K]))
    if lam == 0.0:
        return hi - lo
    k = 2.0 * lam
    return (np.exp(k * hi) - np.exp(k * lo)) / k


def build_speed_measure_walls(
    sub0: SubordinatorPath,
    lam: float,
    K: float,
    grid_step: float,
    mean_c: float,
    jump_floor: float | None = None,
) -> AtomicSpeedMeasure:
    """Grid approximation of mean_c * exp(2 lam v) dv pushed through S^{alpha0,lam}.

    Grid points v_k = -K + k*grid_step each carry the mass of their cell;
    grid_step must divide K.
    With ``jump_floor`` set, every jump above it also gets atoms at both of
    its ends, so the large gaps of the support are resolved exactly.
    """
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    if K > sub0.K + 1e-12:
        raise ValueError("subordinator does not cover the window")
    M = K / grid_step
    if abs(M - round(M)) > 1e-9 * max(1.0, M):
        raise ValueError("grid_step must divide K so that v = 0 is a grid point")
    N = 2 * int(round(M))
    v = -K + grid_step * np.arange(N + 1)
    v[N // 2] = 0.0
    v[-1] = K
    side = np.ones(N + 1, dtype=np.int64)
    if jump_floor is not None:
        sel = (sub0.jumps > jump_floor) & (sub0.locations > -K) & (sub0.locations < K)
        u = sub0.locations[sel]
        v = np.concatenate((v, u, u))
        side = np.concatenate((side, -np.ones(u.size, dtype=np.int64), np.ones(u.size, dtype=np.int64)))
        order = np.lexsort((side, v))
        v, side = v[order], side[order]
        keep = np.ones(v.size, dtype=bool)
        keep[1:] = (v[1:] != v[:-1]) | (side[1:] != side[:-1])
        v, side = v[keep], side[keep]
    x = np.where(side > 0, sub0.value(v, lam), sub0.left_limit(v, lam))
    mass = mean_c * _voronoi_mass(v, K, lam)
    # guard against zero-width cells from coincident grid points
    mass = np.maximum(mass, 1e-300)
    return AtomicSpeedMeasure(
        x=np.asarray(x, dtype=float),
        mass=mass,
        v=v,
        side=side,
        x_lo=float(sub0.value(-K, lam)),
        x_hi=float(sub0.value(K, lam)),
    )


def build_speed_measure_traps(
    sub0: SubordinatorPath,
    subinf: SubordinatorPath,
    lam: float,
    K: float,
    weight_cutoff: float,
) -> AtomicSpeedMeasure:
    """One atom per jump (y, w) of S^{alpha_inf} above the cutoff, at S^{alpha0,lam}(y), mass exp(2 lam y) w."""
    if subinf.epsilon > weight_cutoff:
        raise ValueError("subordinator truncation exceeds the weight cutoff")
    sel = (subinf.jumps > weight_cutoff) & (subinf.locations >= -K) & (subinf.locations <= K)
    y = subinf.locations[sel]
    w = subinf.jumps[sel]
    if y.size == 0:
        raise ValueError("no trap above the cutoff")
    return AtomicSpeedMeasure(
        x=np.asarray(sub0.value(y, lam), dtype=float),
        mass=np.exp(2.0 * lam * y) * w,
        v=y,
        side=np.ones(y.size, dtype=np.int64),
        x_lo=float(sub0.value(-K, lam)),
        x_hi=float(sub0.value(K, lam)),
        weights=w,
    )


@njit(cache=True)
def _qd_kernel(hold, pleft, start, obs, ref_obs, record_cap, rng):
    nobs = obs.shape[0]
    idx = np.empty(nobs, dtype=np.int64)
    mx = np.empty(nobs, dtype=np.int64)
    mn = np.empty(nobs, dtype=np.int64)
    wmx = np.full(nobs, -1, dtype=np.int64)
    rec_t = np.empty(record_cap)
    rec_i = np.empty(record_cap, dtype=np.int64)
    n_rec = 0
    overflow = False
    i = start
    t = 0.0
    hi = start
    lo = start
    whi = -1
    j = 0
    steps = 0
    if record_cap > 0:
        rec_t[0] = 0.0
        rec_i[0] = start
        n_rec = 1
    while j < nobs:
        dt = hold[i] * rng.standard_exponential()
        while j < nobs and t + dt > obs[j]:
            if j == ref_obs:
                whi = i
            idx[j] = i
            mx[j] = hi
            mn[j] = lo
            wmx[j] = whi
            j += 1
        if j >= nobs:
            break
        t += dt
        if rng.random() < pleft[i]:
            i -= 1
        else:
            i += 1
        steps += 1
        if i > hi:
            hi = i
        if i < lo:
            lo = i
        if whi >= 0 and i > whi:
            whi = i
        if record_cap > 0:
            if n_rec < record_cap:
                rec_t[n_rec] = t
                rec_i[n_rec] = i
                n_rec += 1
            else:
                overflow = True
    return idx, mx, mn, wmx, steps, rec_t[:n_rec], rec_i[:n_rec], overflow


@dataclass
class LimitPath:
    measure: AtomicSpeedMeasure
    event_times: np.ndarray
    atoms: np.ndarray
    obs_times: np.ndarray
    obs_atoms: np.ndarray
    obs_max: np.ndarray  # running maximum atom index
    obs_min: np.ndarray
    obs_window_max: np.ndarray  # maximum since the reference observation (-1 before it)
    t_end: float
    steps: int
    overflow: bool = False

    @property
    def spatial(self) -> np.ndarray:
        """Z at the recorded events."""
        return self.measure.v[self.atoms]

    @property
    def resistance(self) -> np.ndarray:
        return self.measure.x[self.atoms]

    def atom_at(self, t: float) -> int:
        if self.overflow or self.event_times.size == 0:
            raise ValueError("path has no complete event record")
        if not 0 <= t <= self.t_end:
            raise ValueError("time outside the simulated horizon")
        k = int(np.searchsorted(self.event_times, t, side="right")) - 1
        return int(self.atoms[k])

    def max_atom(self, t1: float, t2: float) -> int:
        """Highest atom visited over [t1, t2] (right-continuous path)."""
        if self.overflow or self.event_times.size == 0:
            raise ValueError("path has no complete event record")
        k = int(np.searchsorted(self.event_times, t1, side="right")) - 1
        k2 = int(np.searchsorted(self.event_times, t2, side="right"))
        return int(self.atoms[k:k2].max())


def start_atom_from(measure: AtomicSpeedMeasure, x0: float, rng: np.random.Generator) -> int:
    """First atom hit by Brownian motion started at resistance position x0."""
    x = measure.x
    k = int(np.searchsorted(x, x0, side="left"))
    if k < x.size and x[k] == x0:
        return k
    if k == 0:
        return 0
    if k == x.size:
        return x.size - 1
    left, right = x[k - 1], x[k]
    return k - 1 if rng.random() < (right - x0) / (right - left) else k


def simulate_quasi_diffusion(
    measure: AtomicSpeedMeasure,
    start_atom: int,
    t_end: float,
    obs_times=(),
    rng: np.random.Generator | None = None,
    ref_obs: int | None = None,
    record: bool = True,
    record_cap: int = 10_000_000,
) -> LimitPath:
    """Run the quasi-diffusion from start_atom up to t_end."""
    if rng is None:
        raise ValueError("an explicit random stream is required")
    if not 0 <= start_atom < measure.size:
        raise ValueError("start atom outside the measure")
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    obs = np.asarray(obs_times, dtype=float)
    if obs.size and (np.any(np.diff(obs) < 0) or obs[0] < 0 or obs[-1] > t_end):
        raise ValueError("obs_times must be sorted within [0, t_end]")
    hold, pleft = measure.holding_means()
    grid = np.append(obs, t_end)
    ref = -1 if ref_obs is None else int(ref_obs)
    idx, mx, mn, wmx, steps, rt, ri, ovf = _qd_kernel(
        hold, pleft, int(start_atom), grid, ref, int(record_cap) if record else 0, rng
    )
    return LimitPath(
        measure=measure,
        event_times=rt.copy(),
        atoms=ri.copy(),
        obs_times=obs,
        obs_atoms=idx[:-1],
        obs_max=mx[:-1],
        obs_min=mn[:-1],
        obs_window_max=wmx[:-1],
        t_end=float(t_end),
        steps=int(steps),
        overflow=bool(ovf),
    )


def gap_at_atom(measure: AtomicSpeedMeasure, sub0: SubordinatorPath, i: int, lam: float = 0.0) -> float | None:
    """Tilted size of the jump just right of atom i; None (sentinel) at the right end.

    The jump is the largest one whose half-open interval [S(u-), S(u)) lies
    between atom i and atom i+1.  When both ends of a jump are atoms this is
    exactly that jump.
    """
    if i >= measure.size - 1:
        return None
    a = (measure.v[i], measure.side[i])
    b = (measure.v[i + 1], measure.side[i + 1])
    loc = sub0.locations
    # jumps at u with (v_i, side_i) < (u, 0) < (v_{i+1}, side_{i+1})
    lo = np.searchsorted(loc, a[0], side="left" if a[1] < 0 else "right")
    hi = np.searchsorted(loc, b[0], side="left" if b[1] < 0 else "right")
    if hi <= lo:
        # no jump in between: the drift alone separates the atoms
        return float(measure.x[i + 1] - measure.x[i])
    w = sub0.tilted_jumps(lam)[lo:hi]
    return float(w.max())


@dataclass
class LimitObservables:
    max_atom: int
    sup_v: float
    gap: float | None
    at_max: bool  # Z_t equals its running supremum
    max_kept: bool | None  # running supremum at t is not exceeded and is revisited on [t, th]
    same_atom: bool | None  # Z_t = Z_th
    trap_mass: float
    trap_weight: float | None


def limit_observables(
    path: LimitPath, sub0: SubordinatorPath, t: float, h: float | None = None, lam: float = 0.0
) -> LimitObservables:
    """Observables at t (and t*h) read from a recorded path."""
    if t > path.t_end or (h is not None and t * h > path.t_end):
        raise ValueError("time beyond the simulated horizon")
    m = path.measure
    i_t = path.atom_at(t)
    top = path.max_atom(0.0, t)
    kept = same = None
    if h is not None:
        kept = path.max_atom(t, t * h) == top
        same = path.atom_at(t * h) == i_t
    return LimitObservables(
        max_atom=top,
        sup_v=float(m.v[top]),
        gap=gap_at_atom(m, sub0, top, lam),
        at_max=i_t == top,
        max_kept=kept,
        same_atom=same,
        trap_mass=float(m.mass[i_t]),
        trap_weight=None if m.weights is None else float(m.weights[i_t]),
    )


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    replicas: int
    ci: tuple[float, float]


def sample_trap_measure(params: ModelParams, K: float, weight_cutoff: float, rng: np.random.Generator):
    """Fresh limit subordinators and the traps speed measure built on them."""
    a0, ai = params.alpha0, float(params.alpha_inf)
    # resistance coordinates only need the big picture; small jumps are drift
    sub0 = sample_subordinator(a0, K, 1e-4, rng, tilt_sign=-1)
    subinf = sample_subordinator(ai, K, weight_cutoff, rng, tilt_sign=1)
    return sub0, subinf, build_speed_measure_traps(sub0, subinf, params.lam, K, weight_cutoff)


def theta_bar_samples(
    params: ModelParams,
    replicas: int,
    rng: np.random.Generator,
    K: float = 2.0,
    weight_cutoff: float = 1e-4,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-replica (A1, A0 + A2): the occupied trap weight at time 1 and two fresh conductances."""
    if params.mode != "RWT":
        raise ValueError("the sub-aging limit needs traps (mode RWT)")
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    a1 = np.empty(replicas)
    for k in range(replicas):
        _, _, meas = sample_trap_measure(params, K, weight_cutoff, rng)
        start = start_atom_from(meas, 0.0, rng)
        path = simulate_quasi_diffusion(meas, start, 1.0, (1.0,), rng, record=False)
        a1[k] = meas.weights[path.obs_atoms[0]]
    law = DefaultLaw(params)
    s = law.sample(rng, replicas) + law.sample(rng, replicas)
    return a1, s


def theta_bar_from_samples(a1: np.ndarray, s: np.ndarray, h) -> list[Estimate]:
    hs = np.atleast_1d(np.asarray(h, dtype=float))
    if np.any(hs < 0):
        raise ValueError("h must be nonnegative")
    n = a1.size
    out = []
    for hh in hs:
        row = np.exp(-hh * s / (2.0 * a1))
        m = math.fsum(row) / n
        se = float(row.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        out.append(Estimate(m, se, n, (m - 1.96 * se, m + 1.96 * se)))
    return out


def theta_bar_limit(
    params: ModelParams,
    h,
    replicas: int,
    rng: np.random.Generator,
    K: float = 2.0,
    weight_cutoff: float = 1e-4,
):
    """Monte Carlo estimate of E exp(-h (A0 + A2) / (2 A1)).

    A1 is the untilted weight of the trap occupied by the limit process at
    time 1, one fresh environment per replica; A0 and A2 are independent
    draws of the conductance law.  Returns one Estimate per h.
    """
    a1, s = theta_bar_samples(params, replicas, rng, K, weight_cutoff)
    out = theta_bar_from_samples(a1, s, h)
    return out if np.ndim(h) else out[0]
