"""Continuous-time walk on a conductance window and its observables.

The walk holds an Exp(1) time at each site and then steps to a neighbour with
probability proportional to the tilted edge conductance.  The compiled loop
lives in ``_kernels``; this module maps window coordinates (sites -Kn..Kn)
to kernel coordinates (0..2Kn) and computes observables from the event
record.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import (
    KIND_COLLAPSE,
    KIND_MACRO,
    MacroCache,
    exit_batch,
    pair_escape,
    run_walk,
)
from .environment import Environment
from .heavy_tails import ScaleSet

# marks observation times after the walk was absorbed
NOT_REACHED = np.iinfo(np.int64).min


@dataclass(frozen=True)
class WalkOptions:
    """Knobs for simulate_walk.

    collapse_threshold: a pair is collapsed when its edge exceeds this
        multiple of both neighbouring edges (0 disables collapse).
    macro_block: half-width m of exact block moves (0 disables them).
        Incompatible with an event record.
    max_tracking: keep the running maximum exact under macro steps by
        using only blocks below it; turn off when the maximum is not needed.
    reflected: reflect at the window ends, otherwise absorb there.
    stop_sites: extra absorbing sites (a, b) in window coordinates.
    track_from: observation index from which hits and exceedances of the
        running maximum are timed.
    """

    collapse_threshold: float = 50.0
    macro_block: int = 0
    reflected: bool = True
    record: bool = True
    record_cap: int = 5_000_000
    stop_sites: tuple[int, int] | None = None
    track_from: int | None = None
    stop_after_exceed: bool = False
    max_tracking: bool = True


@dataclass(frozen=True)
class CollapseRecord:
    t0: float
    t1: float
    left: int  # pair is {left, left+1}
    second_visit: float  # first time the partner site was entered, -1 if never


@dataclass
class WalkPath:
    start: int
    reflected: bool
    event_times: np.ndarray
    positions: np.ndarray
    kinds: np.ndarray
    collapse_log: list[CollapseRecord]
    obs_times: np.ndarray
    obs_positions: np.ndarray
    obs_maxima: np.ndarray
    end_time: float
    end_position: int
    running_max: int
    stopped: bool
    hit_time: float
    exceed_time: float
    n_micro: int
    n_macro: int
    n_collapse: int
    overflow: bool = False

    @property
    def recorded(self) -> bool:
        return self.event_times.size > 0

    def position_at(self, t: float) -> int:
        """Right-continuous value of the recorded path at time t."""
        self._need_record()
        if t < 0 or t > self.end_time:
            raise ValueError("time outside the simulated horizon")
        for c in self.collapse_log:
            if c.t0 < t < c.t1:
                raise ValueError("position inside a collapsed interval is not recorded")
        k = int(np.searchsorted(self.event_times, t, side="right")) - 1
        return int(self.positions[k])

    def _need_record(self) -> None:
        if not self.recorded:
            raise ValueError("path was simulated without an event record")
        if self.overflow:
            raise ValueError("event record overflowed")

    def visits(self) -> tuple[np.ndarray, np.ndarray]:
        """Times and sites of every recorded site entry, collapse partners included."""
        self._need_record()
        t = [self.event_times]
        x = [self.positions]
        extra = [(c.second_visit, self._partner(c)) for c in self.collapse_log if c.second_visit >= 0]
        if extra:
            t.append(np.array([e[0] for e in extra]))
            x.append(np.array([e[1] for e in extra], dtype=np.int64))
        t = np.concatenate(t)
        x = np.concatenate(x)
        order = np.argsort(t, kind="stable")
        return t[order], x[order]

    def _partner(self, c: CollapseRecord) -> int:
        k = int(np.searchsorted(self.event_times, c.t0, side="right")) - 1
        first = int(self.positions[k])
        return c.left + 1 if first == c.left else c.left

    def to_csv(self, path) -> None:
        self._need_record()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["event_index", "time", "position"])
            for i, (t, x) in enumerate(zip(self.event_times, self.positions)):
                w.writerow([i, repr(float(t)), int(x)])


def _kernel_args(env: Environment, opts: WalkOptions):
    h = env.half_width
    if opts.stop_sites is not None:
        a, b = opts.stop_sites
        stop_lo, stop_hi = a + h, b + h
    elif not opts.reflected:
        stop_lo, stop_hi = 0, 2 * h
    else:
        stop_lo, stop_hi = -1, -1
    return stop_lo, stop_hi


def simulate_walk(
    env: Environment,
    x0: int,
    t_end: float,
    obs_times=(),
    options: WalkOptions | None = None,
    rng: np.random.Generator | None = None,
    cache: MacroCache | None = None,
) -> WalkPath:
    """Simulate one walk replica on env from x0 up to t_end.

    Values at obs_times (and t_end) are exact even when shortcuts are on.
    A MacroCache may be passed to reuse block laws across replicas of the
    same environment.
    """
    opts = options or WalkOptions()
    if rng is None:
        raise ValueError("an explicit random stream is required")
    h = env.half_width
    if not -h <= x0 <= h:
        raise ValueError(f"start {x0} outside the window")
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    obs = np.asarray(obs_times, dtype=float)
    if obs.size and (np.any(np.diff(obs) < 0) or obs[0] < 0 or obs[-1] > t_end):
        raise ValueError("obs_times must be sorted within [0, t_end]")
    if opts.macro_block and opts.record:
        raise ValueError("macro steps cannot be combined with an event record")
    ref = -1 if opts.track_from is None else int(opts.track_from)
    if ref >= obs.size:
        raise ValueError("track_from must index an observation time")
    grid = np.append(obs, t_end)
    stop_lo, stop_hi = _kernel_args(env, opts)
    c = np.ascontiguousarray(env.tilted)
    L = c.shape[0]
    m = int(opts.macro_block)
    if m:
        if cache is None or cache.m != m or cache.size.shape[0] != L // m + 1:
            cache = MacroCache(L, m)
    else:
        cache = MacroCache(0, 0)
    out = run_walk(
        c,
        x0 + h,
        grid,
        m,
        bool(m) and opts.max_tracking,
        float(opts.collapse_threshold),
        stop_lo,
        stop_hi,
        ref,
        bool(opts.stop_after_exceed),
        int(opts.record_cap) if opts.record else 0,
        rng,
        cache.lam,
        cache.a,
        cache.tail,
        cache.fl,
        cache.fr,
        cache.size,
        cache.done,
    )
    (pos, mx, x, t, xbar, stopped, hit, exc, nmi, nma, nco, rt, rx, rk, ovf, c0, c1, ca, cv) = out
    if m and not opts.max_tracking:
        # block moves above the maximum leave it unknown
        mx = np.full_like(mx, -1)
        xbar = NOT_REACHED + h
    log = [
        CollapseRecord(float(a), float(b), int(p) - h, float(v))
        for a, b, p, v in zip(c0, c1, ca, cv)
    ]
    return WalkPath(
        start=x0,
        reflected=opts.reflected,
        event_times=rt.copy(),
        positions=rx - h,
        kinds=rk.copy(),
        collapse_log=log,
        obs_times=obs,
        obs_positions=np.where(pos[:-1] >= 0, pos[:-1] - h, NOT_REACHED),
        obs_maxima=np.where(mx[:-1] >= 0, mx[:-1] - h, NOT_REACHED),
        end_time=float(t) if stopped or (opts.stop_after_exceed and exc >= 0) else float(t_end),
        end_position=int(x) - h,
        running_max=int(xbar) - h,
        stopped=bool(stopped),
        hit_time=float(hit),
        exceed_time=float(exc),
        n_micro=int(nmi),
        n_macro=int(nma),
        n_collapse=int(nco),
        overflow=bool(ovf),
    )


@dataclass(frozen=True)
class ObservableSpec:
    """What walk_observables should compute, in real (unscaled) time.

    gap_times are in units of a_n; the subaging window starts at `shift` and
    h values are in units of d_ninf.
    """

    sup_times: tuple[float, ...] = ()
    windows: tuple[tuple[float, float], ...] = ()
    gap_times: tuple[float, ...] = ()
    shift: float | None = None
    h_list: tuple[float, ...] = ()


@dataclass
class WalkObservables:
    sup_at: dict[float, int] = field(default_factory=dict)
    window_sup: dict[tuple[float, float], int] = field(default_factory=dict)
    gap_n: dict[float, float | None] = field(default_factory=dict)  # None is the boundary sentinel
    escape_T: float | None = None  # inf when no escape before the record ends
    T_n: float | None = None
    window_range_ok: dict[float, bool] = field(default_factory=dict)


def _sup_upto(t_v, x_v, t):
    k = int(np.searchsorted(t_v, t, side="right"))
    return int(x_v[:k].max())


def _escape_time(t_v, x_v, s):
    """First time after s at which a third distinct site has been visited."""
    k = int(np.searchsorted(t_v, s, side="right")) - 1
    seen = {int(x_v[k])}
    for i in range(k + 1, t_v.shape[0]):
        seen.add(int(x_v[i]))
        if len(seen) > 2:
            return float(t_v[i]) - s
    return math.inf


def _window_pair_ok(t_v, x_v, s, e):
    """All positions over [s, e] inside one set of two adjacent sites."""
    k = int(np.searchsorted(t_v, s, side="right")) - 1
    k2 = int(np.searchsorted(t_v, e, side="right"))
    sites = np.unique(x_v[k:k2])
    return bool(sites.size <= 2 and (sites.size < 2 or sites[1] - sites[0] == 1))


def walk_observables(
    path: WalkPath, env: Environment, scales: ScaleSet, spec: ObservableSpec
) -> WalkObservables:
    """Observables of a recorded path.

    Requested times must be observation times of the path whenever
    trap collapse was active, so that no collapsed stay straddles them.
    """
    t_v, x_v = path.visits()
    horizon = path.end_time
    obs = WalkObservables()
    for t in spec.sup_times:
        if t > horizon:
            raise ValueError("time beyond the simulated horizon")
        obs.sup_at[t] = _sup_upto(t_v, x_v, t)
    for t1, t2 in spec.windows:
        if not 0 <= t1 <= t2 <= horizon:
            raise ValueError("bad window")
        k = int(np.searchsorted(t_v, t1, side="right")) - 1
        k2 = int(np.searchsorted(t_v, t2, side="right"))
        obs.window_sup[(t1, t2)] = int(x_v[k:k2].max())
    for t in spec.gap_times:
        ta = t * scales.a_n
        if ta > horizon:
            raise ValueError("time beyond the simulated horizon")
        xb = _sup_upto(t_v, x_v, ta)
        obs.gap_n[t] = None if xb == env.half_width else env.r_tilt(xb) / scales.d_n0
    if spec.shift is not None:
        s = spec.shift
        if s > horizon:
            raise ValueError("shift beyond the simulated horizon")
        esc = _escape_time(t_v, x_v, s)
        if s + esc > horizon:
            esc = math.inf
        obs.escape_T = esc
        unit = scales.d_ninf if scales.d_ninf is not None else 1.0
        obs.T_n = esc / unit
        for hh in spec.h_list:
            e = s + hh * unit
            if e > horizon:
                raise ValueError("window end beyond the simulated horizon")
            ok = _window_pair_ok(t_v, x_v, s, e)
            # the identity {window inside a pair} = {T >= h}, asserted on every path
            if ok != (obs.T_n >= hh):
                raise AssertionError("window event disagrees with the escape time")
            obs.window_range_ok[hh] = bool(ok)
    return obs


def observables_jsonl(records: list[WalkObservables]) -> str:
    lines = []
    for r in records:
        d = {
            "sup_at": [[t, v] for t, v in r.sup_at.items()],
            "window_sup": [[a, b, v] for (a, b), v in r.window_sup.items()],
            "gap_n": [[t, v] for t, v in r.gap_n.items()],
            "escape_T": None if r.escape_T is None or math.isinf(r.escape_T) else r.escape_T,
            "T_n": None if r.T_n is None or math.isinf(r.T_n) else r.T_n,
            "window_range_ok": [[h, v] for h, v in r.window_range_ok.items()],
        }
        lines.append(json.dumps(d))
    return "\n".join(lines) + ("\n" if lines else "")


def exact_mean_exit_two_site(c_left: float, c_mid: float, c_right: float) -> float:
    """Mean time to leave the pair across c_mid, from its left site."""
    if min(c_left, c_mid, c_right) <= 0:
        raise ValueError("weights must be positive")
    q1 = c_mid / (c_mid + c_left)
    q2 = c_mid / (c_mid + c_right)
    # a = 1 + q1 b, b = 1 + q2 a
    return (1.0 + q1) / (1.0 - q1 * q2)


def escape_laplace_geom(c_left: float, c_mid: float, c_right: float, xi: float) -> float:
    """Laplace transform at xi of a Geometric number of Exp(1) pairs.

    The success probability is that of leaving the pair in one back-and-forth
    cycle.  It sandwiches the true escape law and becomes tight as c_mid grows.
    """
    if xi < 0:
        raise ValueError("xi must be nonnegative")
    p1 = c_left / (c_left + c_mid)
    p2 = c_right / (c_right + c_mid)
    p = 1.0 - (1.0 - p1) * (1.0 - p2)
    return p / (1.0 - (1.0 - p) * (1.0 + xi) ** -2)


def escape_laplace_geom_mean(c_left: float, c_mid: float, c_right: float) -> float:
    """Mean 2(1-p)/p implied by escape_laplace_geom."""
    p1 = c_left / (c_left + c_mid)
    p2 = c_right / (c_right + c_mid)
    p = 1.0 - (1.0 - p1) * (1.0 - p2)
    return 2.0 * (1.0 - p) / p


def exit_times(
    env: Environment,
    x0: int,
    a: int,
    b: int,
    replicas: int,
    rng: np.random.Generator,
    collapse_threshold: float = 50.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Exit times and exit sites of walks from x0 absorbed at a and b."""
    h = env.half_width
    if not -h <= a < x0 < b <= h:
        raise ValueError("need a < x0 < b inside the window")
    t, s = exit_batch(np.ascontiguousarray(env.tilted), x0 + h, a + h, b + h, float(collapse_threshold), int(replicas), rng)
    return t, s - h


def escape_time_distribution(
    env: Environment,
    edge_j: int,
    replicas: int,
    rng: np.random.Generator,
    collapse_threshold: float = 50.0,
) -> np.ndarray:
    """Sorted normalised escape times T*(c_left+c_right)/(2 c_mid) from the pair {j, j+1}.

    The walk starts at j; T is the first time it stands outside the pair.
    """
    h = env.half_width
    if not -h < edge_j < h - 1:
        raise ValueError("pair and both neighbours must lie in the window")
    t, _ = exit_times(env, edge_j, edge_j - 1, edge_j + 2, replicas, rng, collapse_threshold)
    scale = (env.c_tilt(edge_j - 1) + env.c_tilt(edge_j + 1)) / (2.0 * env.c_tilt(edge_j))
    return np.sort(t * scale)


def escape_after(env: Environment, x: int, rng: np.random.Generator) -> tuple[float, int]:
    """Time until a walk started at x has seen three distinct sites, and its partner site."""
    h = env.half_width
    t, _, partner, _ = pair_escape(np.ascontiguousarray(env.tilted), x + h, rng)
    return float(t), int(partner) - h


__all__ = [
    "NOT_REACHED",
    "KIND_COLLAPSE",
    "KIND_MACRO",
    "CollapseRecord",
    "ObservableSpec",
    "WalkObservables",
    "WalkOptions",
    "WalkPath",
    "escape_after",
    "escape_laplace_geom",
    "escape_laplace_geom_mean",
    "escape_time_distribution",
    "exact_mean_exit_two_site",
    "exit_times",
    "observables_jsonl",
    "simulate_walk",
    "walk_observables",
]
