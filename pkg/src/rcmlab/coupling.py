"""Explicit coupling of discrete environments with fixed limit subordinators.

A Bernoulli(p) sequence splits the edges into conductance type (b=1) and
resistance type (b=0).  The k-th edge of each type, counted outward from the
origin, reads the increment of the matching subordinator over the cell
(k/n, (k+1)/n] and turns it into a conductance or a resistance through the
tail-matching map G^{-1}.  The increment of a stable subordinator over a cell
is stable, so the marginal law of every edge is exactly the conditioned edge
law, while big jumps of the subordinator become big edges.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .environment import Environment, PointMeasure
from .heavy_tails import (
    ModelParams,
    StableTailTable,
    SubordinatorPath,
    scaling_terms,
    stable_tail_table,
)


class TailMatch:
    """G and its inverse for one tail index.

    G matches upper tails, P(S(1) > G(y)) = P(c_hat > y), where c_hat has the
    Pareto law P(c_hat > y) = y**-alpha on [1, inf).
    """

    def __init__(self, alpha: float, table: StableTailTable | None = None):
        self.alpha = alpha
        self.table = table or stable_tail_table(alpha)

    def G(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if np.any(y < 1.0):
            raise ValueError("the conditioned law lives on [1, inf)")
        return self.table.inverse_survival(y ** (-self.alpha))

    def G_inv(self, s) -> np.ndarray:
        """Upper quantile of c_hat at the stable survival of s."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.ones_like(s)
        pos = s > 0
        out[pos] = np.exp(-self.table.log_survival(s[pos]) / self.alpha)
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.table.log_x).tobytes())
        h.update(np.ascontiguousarray(self.table.log_sf).tobytes())
        return h.hexdigest()


def g_function(alpha: float, n: int, y, quantile_table: TailMatch, d_star: float):
    """g_n(y) = G^{-1}(n^{1/alpha} y) / d*_n."""
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0):
        raise ValueError("y must be nonnegative")
    out = quantile_table.G_inv(n ** (1.0 / alpha) * y_arr) / d_star
    return float(out[0]) if y_arr.ndim == 0 else out


@dataclass(frozen=True)
class CouplingBundle:
    """Everything the coupled environments are built from.

    ``bern[i + K*n_max]`` is b_i for edges -K*n_max..K*n_max-1.  ``subinf``
    is None under RW.
    """

    params: ModelParams
    K: int
    n_max: int
    bern: np.ndarray
    sub0: SubordinatorPath
    subinf: SubordinatorPath | None
    bern_seed: int | None = None

    def __post_init__(self) -> None:
        b = np.asarray(self.bern, dtype=np.int8)
        if b.shape != (2 * self.K * self.n_max,):
            raise ValueError("Bernoulli sequence does not cover the window")
        if np.any((b != 0) & (b != 1)):
            raise ValueError("Bernoulli entries must be 0 or 1")
        if b.any() and self.subinf is None:
            raise ValueError("conductance-type edges need the alpha_inf subordinator")
        object.__setattr__(self, "bern", b)

    def table0(self) -> TailMatch:
        return TailMatch(self.params.alpha0)

    def tableinf(self) -> TailMatch | None:
        return None if self.subinf is None else TailMatch(float(self.params.alpha_inf))


def star_index(bern: np.ndarray, n_max: int, K: int, n: int) -> np.ndarray:
    """x* for x = -Kn..Kn, by counting b=1 edges between 0 and x."""
    h = K * n_max
    b = bern[h - K * n : h + K * n].astype(np.int64)
    out = np.zeros(2 * K * n + 1, dtype=np.int64)
    hn = K * n
    # x >= 0: #{0 <= j < x : b_j = 1}
    out[hn + 1 :] = np.cumsum(b[hn:])
    # x < 0: -#{x < j < 0 : b_j = 1}
    neg = b[:hn][::-1]  # b_{-1}, b_{-2}, ...
    cnt = np.concatenate(([0], np.cumsum(neg)[:-1]))  # for x = -1, -2, ...
    out[:hn] = -cnt[::-1]
    return out


def _cell_indices(bern_n: np.ndarray, xstar: np.ndarray, K: int, n: int):
    """Cell index of every edge in its own family's subordinator."""
    x = np.arange(-K * n, K * n)
    xs = xstar[:-1]
    k1 = np.where(x >= 0, xs, xs - 1)
    k0 = x - xs
    return np.where(bern_n == 1, k1, k0)


def build_bundle(
    params: ModelParams,
    K: int,
    n_max: int,
    rng_or_seed,
    eta: float = 0.005,
) -> CouplingBundle:
    """Sample a bundle whose subordinators resolve cells of width 1/n_max.

    The truncation level is eta * n_max**(-1/alpha), far below the typical
    cell increment, so each cell sums many atoms and its law is close to
    stable.  The three random families come from independent substreams.
    """
    from .heavy_tails import sample_subordinator

    ss = rng_or_seed if isinstance(rng_or_seed, np.random.SeedSequence) else np.random.SeedSequence(rng_or_seed)
    s_b, s_0, s_inf = ss.spawn(3)
    seed_b = int(s_b.generate_state(1, dtype=np.uint64)[0])
    L = 2 * K * n_max
    if params.mode == "RWT":
        bern = (np.random.default_rng(seed_b).random(L) < params.p).astype(np.int8)
    else:
        bern = np.zeros(L, dtype=np.int8)
    a0 = params.alpha0
    sub0 = sample_subordinator(a0, K, eta * n_max ** (-1.0 / a0), np.random.default_rng(s_0), tilt_sign=-1)
    subinf = None
    if params.mode == "RWT":
        ai = float(params.alpha_inf)
        subinf = sample_subordinator(ai, K, eta * n_max ** (-1.0 / ai), np.random.default_rng(s_inf), tilt_sign=1)
    return CouplingBundle(params, K, n_max, bern, sub0, subinf, bern_seed=seed_b)


@dataclass(frozen=True)
class Correspondence:
    """Edge index of the cell holding each subordinator atom (-K*n - 1 if outside)."""

    walls: np.ndarray
    traps: np.ndarray | None


def _cell_to_edge(kind_edges_pos: np.ndarray, kind_edges_neg: np.ndarray, k: np.ndarray, miss: int) -> np.ndarray:
    out = np.full(k.shape, miss, dtype=np.int64)
    pos = k >= 0
    ok = pos & (k < kind_edges_pos.size)
    out[ok] = kind_edges_pos[k[ok]]
    neg = ~pos
    j = -k - 1
    ok = neg & (j < kind_edges_neg.size)
    out[ok] = kind_edges_neg[j[ok]]
    return out


def build_coupled_environment(bundle: CouplingBundle, params: ModelParams, n: int, K: int):
    """Coupled environment at scale n and the atom-to-edge correspondence."""
    if K != bundle.K or n > bundle.n_max or n < 1:
        raise ValueError("window mismatch between bundle and request")
    if params.mode != bundle.params.mode:
        raise ValueError("mode mismatch between bundle and request")
    h = bundle.K * bundle.n_max
    bern_n = bundle.bern[h - K * n : h + K * n]
    xstar = star_index(bundle.bern, bundle.n_max, K, n)
    cells = _cell_indices(bern_n, xstar, K, n)
    sc = scaling_terms(params, n)
    edges = np.empty(2 * K * n)
    # both families read cells (k/n, (k+1)/n] for k in [-Kn, Kn)
    is1 = bern_n == 1
    if (~is1).any():
        inc0 = bundle.sub0.cell_increments(-K, 1.0 / n, 2 * K * n)
        tab0 = bundle.table0()
        r = sc.d_star_n0 * g_function(params.alpha0, n, inc0[cells[~is1] + K * n], tab0, sc.d_star_n0)
        edges[~is1] = 1.0 / r
    if is1.any():
        ai = float(params.alpha_inf)
        inc1 = bundle.subinf.cell_increments(-K, 1.0 / n, 2 * K * n)
        tab1 = bundle.tableinf()
        edges[is1] = sc.d_star_ninf * g_function(ai, n, inc1[cells[is1] + K * n], tab1, sc.d_star_ninf)
    env = Environment(n=n, K=K, edges=edges, lam=params.lam, mode=params.mode, params=params)

    x = np.arange(-K * n, K * n)
    miss = -K * n - 1
    zeros = x[~is1]
    ones = x[is1]
    k0 = np.floor(bundle.sub0.locations * n).astype(np.int64)
    # cells are closed on the right
    k0[k0 / n == bundle.sub0.locations] -= 1
    walls = _cell_to_edge(zeros[zeros >= 0], zeros[zeros < 0][::-1], k0, miss)
    traps = None
    if bundle.subinf is not None:
        k1 = np.floor(bundle.subinf.locations * n).astype(np.int64)
        k1[k1 / n == bundle.subinf.locations] -= 1
        traps = _cell_to_edge(ones[ones >= 0], ones[ones < 0][::-1], k1, miss)
    return env, Correspondence(walls, traps)


def limit_point_measures(bundle: CouplingBundle, w_min: float = 0.0):
    """Limit atoms in discrete coordinates.

    A resistance-type atom (u, w) sits at u/q with weight q**(-1/alpha0)
    (q = 1 - p, equal to 1 under RW), a conductance-type one at u/p with
    weight p**(-1/alpha_inf).  Only atoms landing inside [-K, K] are kept.
    """
    q = 1.0 - bundle.params.trap_weight
    K = bundle.K

    def _make(sub, frac, alpha):
        loc = sub.locations / frac
        w = sub.jumps * frac ** (-1.0 / alpha)
        sel = (np.abs(loc) <= K) & (w > w_min)
        return PointMeasure(loc[sel], w[sel])

    walls = _make(bundle.sub0, q, bundle.params.alpha0)
    traps = None
    if bundle.subinf is not None:
        traps = _make(bundle.subinf, bundle.params.p, float(bundle.params.alpha_inf))
    return walls, traps


def location_tolerance(n: int, K: int, frac: float) -> float:
    """2/n plus four binomial standard deviations of the thinned position.

    An atom at u lands on the edge x with x* = floor(nu); x - x*/frac
    fluctuates like sqrt(x (1-frac)/frac) by the law of large numbers.
    """
    extra = 4.0 * math.sqrt(K * n * (1.0 - frac) / frac) / n if frac < 1.0 else 0.0
    return 2.0 / n + extra


@dataclass
class MatchResult:
    matches: dict[int, int]  # limit atom index -> discrete atom index
    absent: list[int]
    ambiguous: list[int]
    limit_count: int
    discrete_count: int
    displacement: np.ndarray  # sup-norm distance per matched atom, in limit order

    @property
    def ok(self) -> bool:
        return not self.absent and not self.ambiguous and self.limit_count == self.discrete_count

    @property
    def max_displacement(self) -> float:
        return float(self.displacement.max()) if self.displacement.size else 0.0


def match_atoms(
    discrete: PointMeasure,
    limit: PointMeasure,
    window: tuple[float, float, float],
    loc_tol: float,
    weight_tol: float = 0.05,
) -> MatchResult:
    """Match each limit atom in window = (x1, x2, w_min) to one discrete atom.

    A candidate must be within loc_tol in location and within a relative
    weight_tol in weight.  Two candidates make the match ambiguous; none make
    it absent.  Counts of both measures inside the window are reported.
    """
    x1, x2, w_min = window
    if not w_min > 0:
        raise ValueError("window must stay away from weight 0")
    lm = np.flatnonzero((limit.locations >= x1) & (limit.locations <= x2) & (limit.weights >= w_min))
    matches: dict[int, int] = {}
    absent: list[int] = []
    ambiguous: list[int] = []
    disp = []
    dl, dw = discrete.locations, discrete.weights
    for i in lm:
        u, w = limit.locations[i], limit.weights[i]
        a = np.searchsorted(dl, u - loc_tol, side="left")
        b = np.searchsorted(dl, u + loc_tol, side="right")
        cand = a + np.flatnonzero(np.abs(dw[a:b] - w) <= weight_tol * w)
        if cand.size == 0:
            absent.append(int(i))
        elif cand.size > 1:
            ambiguous.append(int(i))
        else:
            j = int(cand[0])
            matches[int(i)] = j
            disp.append(max(abs(dl[j] - u), abs(dw[j] - w)))
    return MatchResult(
        matches=matches,
        absent=absent,
        ambiguous=ambiguous,
        limit_count=int(lm.size),
        discrete_count=discrete.count(x1, x2, w_min),
        displacement=np.array(disp),
    )


def bundle_to_json(bundle: CouplingBundle) -> str:
    def _sub(s):
        if s is None:
            return None
        return {
            "alpha": s.alpha,
            "K": s.K,
            "epsilon": s.epsilon,
            "tilt_sign": s.tilt_sign,
            "locations": s.locations.tolist(),
            "jumps": s.jumps.tolist(),
        }

    tinf = bundle.tableinf()
    return json.dumps(
        {
            "params": bundle.params.to_dict(),
            "K": bundle.K,
            "n_max": bundle.n_max,
            "bern_seed": bundle.bern_seed,
            "bern": "".join("1" if b else "0" for b in bundle.bern),
            "sub0": _sub(bundle.sub0),
            "subinf": _sub(bundle.subinf),
            "table0_sha256": bundle.table0().digest(),
            "tableinf_sha256": None if tinf is None else tinf.digest(),
        }
    )


def bundle_from_json(text: str) -> CouplingBundle:
    d = json.loads(text)
    params = ModelParams.from_dict(d["params"])

    def _sub(s):
        if s is None:
            return None
        return SubordinatorPath(
            s["alpha"], s["K"], s["epsilon"], np.array(s["locations"]), np.array(s["jumps"]), s["tilt_sign"]
        )

    bundle = CouplingBundle(
        params=params,
        K=int(d["K"]),
        n_max=int(d["n_max"]),
        bern=np.frombuffer(d["bern"].encode(), dtype=np.uint8) - ord("0"),
        sub0=_sub(d["sub0"]),
        subinf=_sub(d["subinf"]),
        bern_seed=d["bern_seed"],
    )
    # tables are rebuilt from the parameters; the digests guard against drift
    if bundle.table0().digest() != d["table0_sha256"]:
        raise ValueError("alpha0 table differs from the recorded one")
    tinf = bundle.tableinf()
    if tinf is not None and tinf.digest() != d["tableinf_sha256"]:
        raise ValueError("alpha_inf table differs from the recorded one")
    return bundle


__all__ = [
    "CouplingBundle",
    "Correspondence",
    "MatchResult",
    "TailMatch",
    "build_bundle",
    "build_coupled_environment",
    "bundle_from_json",
    "bundle_to_json",
    "g_function",
    "limit_point_measures",
    "location_tolerance",
    "match_atoms",
    "star_index",
]
