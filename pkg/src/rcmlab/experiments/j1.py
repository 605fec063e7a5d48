"""Upper bound on the Skorokhod J1 distance between two cadlag paths.

Paths are piecewise affine between breakpoints with jumps at breakpoints.
The bound uses the time change that sends each large jump of g onto the
matching large jump of f and is linear in between.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..environment import StepProcess
from ..heavy_tails import SubordinatorPath


@dataclass(frozen=True)
class CadlagPath:
    """Path on [0, 1]: value[k] = f(t_k), left[k] = f(t_k-), affine in between."""

    times: np.ndarray
    values: np.ndarray
    left: np.ndarray

    def __post_init__(self) -> None:
        t = self.times
        if t[0] != 0.0 or t[-1] != 1.0 or np.any(np.diff(t) <= 0):
            raise ValueError("breakpoints must increase from 0 to 1")

    @property
    def jumps(self) -> np.ndarray:
        return self.values - self.left

    def _locate(self, y):
        k = np.searchsorted(self.times, y, side="right") - 1
        return np.clip(k, 0, self.times.size - 2)

    def value(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        k = self._locate(y)
        t0, t1 = self.times[k], self.times[k + 1]
        slope = (self.left[k + 1] - self.values[k]) / (t1 - t0)
        out = self.values[k] + slope * (y - t0)
        return np.where(y >= 1.0, self.values[-1], out)

    def left_value(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        j = np.searchsorted(self.times, y, side="left")
        on = (j < self.times.size) & (self.times[np.minimum(j, self.times.size - 1)] == y)
        return np.where(on, self.left[np.minimum(j, self.times.size - 1)], self.value(y))


@dataclass(frozen=True)
class J1Bound:
    value: float
    ok: bool
    matched: int
    time_shift: float = 0.0
    space_gap: float = 0.0


def j1_upper_bound(f: CadlagPath, g: CadlagPath, delta: float) -> J1Bound:
    """sup|f(xi(t)) - g(t)| + sup|xi(t) - t| for the jump-matching time change xi.

    Fails (ok=False) when f and g have different numbers of jumps above delta.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    jf = np.flatnonzero(np.abs(f.jumps) > delta)
    jg = np.flatnonzero(np.abs(g.jumps) > delta)
    if jf.size != jg.size:
        return J1Bound(float("inf"), False, 0)
    tau = f.times[jf]
    s = g.times[jg]
    # xi sends s_k to tau_k, piecewise linear, fixing 0 and 1
    knots_g = np.concatenate(([0.0], s, [1.0]))
    knots_f = np.concatenate(([0.0], tau, [1.0]))
    if np.any(np.diff(knots_g) <= 0) or np.any(np.diff(knots_f) <= 0):
        return J1Bound(float("inf"), False, 0)
    shift = float(np.max(np.abs(tau - s))) if s.size else 0.0
    # breakpoints of g and preimages of breakpoints of f
    pre = np.interp(f.times, knots_f, knots_g)
    pts = np.unique(np.concatenate((g.times, pre)))
    xi = np.interp(pts, knots_g, knots_f)
    # both sides are affine between consecutive points: compare both one-sided values
    right = np.abs(f.value(xi) - g.value(pts))
    left = np.abs(f.left_value(xi) - g.left_value(pts))
    gap = float(max(right.max(), left.max()))
    return J1Bound(gap + shift, True, int(s.size), shift, gap)


def path_from_step_process(proc: StepProcess) -> CadlagPath:
    """Rescale a two-sided step process on [-K, K] to [0, 1].

    On the negative half-line the process is left-continuous at the
    breakpoints; only the values at the breakpoints change when it is
    turned cadlag, which leaves J1 distances unchanged.
    """
    K = proc.K
    vals = proc.values
    br = proc.breaks
    t = (br + K) / (2.0 * K)
    # value on [t_k, t_k+1): vals[k] for breaks >= 0, vals[k+1] below 0
    right = np.where(br >= 0, vals, np.append(vals[1:], vals[-1]))
    left = np.concatenate(([right[0]], right[:-1]))
    return CadlagPath(t, right, left)


def path_from_subordinator(sub: SubordinatorPath, K: float, lam: float = 0.0, loc_scale: float = 1.0, size_scale: float = 1.0) -> CadlagPath:
    """t -> size_scale * S(loc_scale * t) on [-K, K], rescaled to [0, 1].

    With loc_scale = q and size_scale = q**(-1/alpha) this is the limit
    process in the coordinates of the thinned discrete environment.
    """
    sel = (sub.locations > -K * loc_scale) & (sub.locations < K * loc_scale)
    u = sub.locations[sel] / loc_scale
    pts = np.concatenate(([-K], u, [K]))
    v = size_scale * np.asarray(sub.value(pts * loc_scale, lam))
    lv = size_scale * np.asarray(sub.left_limit(pts * loc_scale, lam))
    lv[0] = v[0]
    t = (pts + K) / (2.0 * K)
    return CadlagPath(t, v, lv)
