"""Finite-window conductance environments and their exact network quantities."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .heavy_tails import DefaultLaw, EdgeLaw, ModelParams, ScaleSet


@dataclass(frozen=True)
class Environment:
    """Edge conductances c_i of edges {i, i+1}, i = -Kn..Kn-1, on sites -Kn..Kn.

    ``edges[i + K*n]`` stores c_i untilted; tilted accessors apply
    c_i * exp(2*lam*i/n).
    """

    n: int
    K: int
    edges: np.ndarray
    lam: float = 0.0
    mode: str = "RW"
    params: ModelParams | None = None
    seed: int | None = None
    _tilted: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        edges = np.ascontiguousarray(self.edges, dtype=float)
        if edges.shape != (2 * self.K * self.n,):
            raise ValueError(f"expected {2 * self.K * self.n} edges, got {edges.shape}")
        if not np.all(np.isfinite(edges)) or np.any(edges <= 0.0):
            raise ValueError("conductances must be positive and finite")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        idx = np.arange(-self.K * self.n, self.K * self.n)
        tilted = edges * np.exp(2.0 * self.lam * idx / self.n) if self.lam != 0.0 else edges
        tilted = np.ascontiguousarray(tilted)
        tilted.setflags(write=False)
        object.__setattr__(self, "_tilted", tilted)

    @property
    def half_width(self) -> int:
        return self.K * self.n

    @property
    def tilted(self) -> np.ndarray:
        """Tilted conductances in storage order (edge -Kn first)."""
        return self._tilted

    def _edge(self, i: int) -> int:
        j = i + self.half_width
        if not 0 <= j < self.edges.shape[0]:
            raise IndexError(f"edge {i} outside the window")
        return j

    def c(self, i: int) -> float:
        return float(self.edges[self._edge(i)])

    def r(self, i: int) -> float:
        return 1.0 / self.c(i)

    def c_tilt(self, i: int) -> float:
        return float(self._tilted[self._edge(i)])

    def r_tilt(self, i: int) -> float:
        return 1.0 / self.c_tilt(i)

    def site_weight(self, x: int) -> float:
        """Tilted c(x); a boundary site carries its single edge."""
        h = self.half_width
        if not -h <= x <= h:
            raise IndexError(f"site {x} outside the window")
        s = 0.0
        if x > -h:
            s += self.c_tilt(x - 1)
        if x < h:
            s += self.c_tilt(x)
        return s

    def resistance_partial_sums(self) -> np.ndarray:
        """P[k + Kn] = R(0, k) for k >= 0 and -R(k, 0) for k < 0 (tilted)."""
        r = 1.0 / self._tilted
        h = self.half_width
        out = np.zeros(2 * h + 1)
        out[h + 1 :] = np.cumsum(r[h:])
        out[:h] = -np.cumsum(r[:h][::-1])[::-1]
        return out

    def to_record(self) -> dict:
        return {
            "seed": self.seed,
            "n": self.n,
            "K": self.K,
            "mode": self.mode,
            "params": None if self.params is None else self.params.to_dict(),
            "edges": self.edges.tolist(),
        }

    def to_json(self) -> str:
        # float repr is the shortest round-tripping form, so this is bit exact
        return json.dumps(self.to_record())

    @classmethod
    def from_json(cls, line: str) -> "Environment":
        rec = json.loads(line)
        params = None if rec.get("params") is None else ModelParams.from_dict(rec["params"])
        lam = params.lam if params is not None else 0.0
        return cls(
            n=int(rec["n"]),
            K=int(rec["K"]),
            edges=np.array(rec["edges"], dtype=float),
            lam=lam,
            mode=rec["mode"],
            params=params,
            seed=rec.get("seed"),
        )


def generate_environment(
    params: ModelParams,
    n: int,
    K: int,
    rng: np.random.Generator,
    law: EdgeLaw | None = None,
    seed: int | None = None,
) -> Environment:
    """2Kn i.i.d. edges from the (default) edge law."""
    if n < 1 or K < 1:
        raise ValueError("n and K must be >= 1")
    law = law or DefaultLaw(params)
    c = law.sample(rng, 2 * K * n)
    return Environment(n=n, K=K, edges=c, lam=params.lam, mode=params.mode, params=params, seed=seed)


def effective_resistance(env: Environment, i: int, j: int) -> float:
    """Series resistance between sites i and j (tilted)."""
    h = env.half_width
    for v in (i, j):
        if not -h <= v <= h:
            raise IndexError(f"site {v} outside the window")
    if i == j:
        return 0.0
    lo, hi = min(i, j), max(i, j)
    return float(np.sum(1.0 / env.tilted[lo + h : hi + h]))


def hitting_probability_exact(env: Environment, x: int, a: int, b: int) -> float:
    """P_x(hit b before a) = R(a, x) / R(a, b)."""
    if a == b:
        raise ValueError("a and b must differ")
    if not a < x < b:
        raise ValueError("need a < x < b")
    return effective_resistance(env, a, x) / effective_resistance(env, a, b)


class StepProcess:
    """Rescaled partial-sum process S(t) = P[floor(nt)] (t >= 0), P[ceil(nt)] (t < 0).

    Values are kept on the breakpoints k/n, k = -Kn..Kn, and evaluated by
    binary search with the floor/ceil convention of each half-line.
    """

    def __init__(self, n: int, K: int, values: np.ndarray):
        self.n = n
        self.K = K
        self.breaks = np.arange(-K * n, K * n + 1) / n
        self.values = np.asarray(values, dtype=float)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(np.abs(t) > self.K):
            raise ValueError("t outside [-K, K]")
        right = np.searchsorted(self.breaks, t, side="right") - 1
        left = np.searchsorted(self.breaks, t, side="left")
        idx = np.where(t >= 0.0, right, left)
        out = self.values[idx]
        return float(out) if out.ndim == 0 else out

    def increment(self, k: int) -> float:
        """S((k+1)/n) - S(k/n) for an integer k."""
        h = self.K * self.n
        return float(self.values[k + 1 + h] - self.values[k + h])


@dataclass(frozen=True)
class PointMeasure:
    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        loc = np.asarray(self.locations, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if loc.shape != w.shape:
            raise ValueError("locations and weights differ in length")
        if loc.size > 1 and np.any(np.diff(loc) <= 0):
            raise ValueError("locations must be strictly increasing")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)

    def total_mass(self) -> float:
        return float(self.weights.sum())

    def count(self, x1: float, x2: float, w_min: float) -> int:
        """Number of atoms in [x1, x2] x [w_min, inf)."""
        sel = (self.locations >= x1) & (self.locations <= x2) & (self.weights >= w_min)
        return int(sel.sum())


def rescaled_processes(env: Environment, scales: ScaleSet):
    """(S_n^alpha0, S_n^alphainf, nu_n^alpha0, nu_n^alphainf).

    The conductance objects are None under RW.
    """
    n, K, h = env.n, env.K, env.half_width
    s0 = StepProcess(n, K, env.resistance_partial_sums() / scales.d_n0)
    loc = np.arange(-h, h) / n
    nu0 = PointMeasure(loc, 1.0 / env.edges / scales.d_n0)
    if scales.d_ninf is None:
        return s0, None, nu0, None
    c = env.tilted
    vals = np.zeros(2 * h + 1)
    vals[h + 1 :] = np.cumsum(c[h:])
    vals[:h] = -np.cumsum(c[:h][::-1])[::-1]
    sinf = StepProcess(n, K, vals / scales.d_ninf)
    nuinf = PointMeasure(loc, env.edges / scales.d_ninf)
    return s0, sinf, nu0, nuinf


def wall_trap_sets(env: Environment, scales: ScaleSet, delta_hat: float = 0.1):
    """Indices of n-walls and n-traps in the window and the separation flag."""
    if not 0.0 < delta_hat < 1.0:
        raise ValueError("delta_hat must lie in (0, 1)")
    h = env.half_width
    idx = np.arange(-h, h)
    walls = idx[1.0 / env.edges > scales.d_n0 ** (1.0 - delta_hat)]
    if scales.d_ninf is not None:
        traps = idx[env.edges > scales.d_ninf ** (1.0 - delta_hat)]
    else:
        traps = idx[:0]
    members = np.union1d(walls, traps)
    separated = bool(np.all(np.diff(members) > env.n**0.25))
    return walls, traps, separated


def mean_conductance(params: ModelParams) -> float:
    """E[c] of the default law (finite under RW only)."""
    return DefaultLaw(params).mean_c()


__all__ = [
    "Environment",
    "PointMeasure",
    "StepProcess",
    "effective_resistance",
    "generate_environment",
    "hitting_probability_exact",
    "mean_conductance",
    "rescaled_processes",
    "wall_trap_sets",
]

