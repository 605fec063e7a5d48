"""Heavy-tailed edge laws, one-sided stable marginals and two-sided subordinators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal
from functools import lru_cache
from typing import Protocol

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

MODES = ("RW", "RWT")


@dataclass(frozen=True)
class ModelParams:
    """Model parameters.

    ``lam`` is the bias parameter (``lambda`` in config files).  Under mode
    ``RW`` the fields ``alpha_inf`` and ``p`` are ignored.
    """

    alpha0: float
    alpha_inf: float | None = None
    lam: float = 0.0
    p: float | None = None
    mode: str = "RW"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.alpha0 < 1.0:
            raise ValueError("alpha0 must lie in (0, 1)")
        if not math.isfinite(self.lam):
            raise ValueError("lambda must be finite")
        if self.mode == "RWT":
            if self.alpha_inf is None or not 0.0 < self.alpha_inf < 1.0:
                raise ValueError("RWT mode needs alpha_inf in (0, 1)")
            if self.p is None or not 0.0 < self.p < 1.0:
                raise ValueError("RWT mode needs p in (0, 1)")

    @property
    def trap_weight(self) -> float:
        """Probability of a conductance-type edge (0 under RW)."""
        return float(self.p) if self.mode == "RWT" else 0.0

    def to_dict(self) -> dict:
        return {
            "alpha0": self.alpha0,
            "alpha_inf": self.alpha_inf,
            "lambda": self.lam,
            "p": self.p,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        allowed = {"alpha0", "alpha_inf", "lambda", "p", "mode"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown model parameter keys: {sorted(unknown)}")
        return cls(
            alpha0=float(d["alpha0"]),
            alpha_inf=None if d.get("alpha_inf") is None else float(d["alpha_inf"]),
            lam=float(d.get("lambda", 0.0)),
            p=None if d.get("p") is None else float(d["p"]),
            mode=d.get("mode", "RW"),
        )


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"tail index must lie in (0, 1), got {alpha}")


def pareto_quantile(u, alpha: float):
    """Return t = u**(-1/alpha), the upper-tail quantile of a Pareto law on [1, inf)."""
    _check_alpha(alpha)
    arr = np.asarray(u, dtype=float)
    if np.any(~(arr > 0.0)) or np.any(arr > 1.0):
        raise ValueError("u must lie in (0, 1]")
    out = arr ** (-1.0 / alpha)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# edge laws


class EdgeLaw(Protocol):
    """Plug-in seam for conductance laws.

    A law must sample conductances and expose the survival functions of
    c and r = 1/c, plus the upper-tail quantiles of the conditioned laws
    (c given c >= 1, and r given r > 1) used by the coupling.
    """

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray: ...

    def survival_c(self, t: np.ndarray) -> np.ndarray: ...

    def survival_r(self, t: np.ndarray) -> np.ndarray: ...

    def cond_c_upper_quantile(self, u: np.ndarray) -> np.ndarray: ...

    def cond_r_upper_quantile(self, u: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class DefaultLaw:
    """The default admissible laws with constant slowly varying parts.

    RW: r is Pareto(alpha0) on [1, inf), so c = 1/r <= 1.
    RWT: with probability p, c is Pareto(alpha_inf); otherwise r is Pareto(alpha0).
    """

    params: ModelParams

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        a0 = self.params.alpha0
        if self.params.mode == "RW":
            u = 1.0 - rng.random(size)
            return u ** (1.0 / a0)
        ai = float(self.params.alpha_inf)
        b = rng.random(size) < self.params.p
        u = 1.0 - rng.random(size)
        return np.where(b, u ** (-1.0 / ai), u ** (1.0 / a0))

    def survival_c(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        a0 = self.params.alpha0
        q = 1.0 - self.params.trap_weight
        # below 1 only the resistance-type part matters: P(c > t) = P(r < 1/t)
        low = self.params.trap_weight + q * (1.0 - np.clip(t, 0.0, 1.0) ** a0)
        if self.params.mode == "RW":
            return np.where(t < 1.0, low, 0.0)
        high = self.params.p * np.maximum(t, 1.0) ** (-float(self.params.alpha_inf))
        return np.where(t < 1.0, low, high)

    def survival_r(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        q = 1.0 - self.params.trap_weight
        high = q * np.maximum(t, 1.0) ** (-self.params.alpha0)
        if self.params.mode == "RW":
            return np.where(t < 1.0, 1.0, high)
        ai = float(self.params.alpha_inf)
        low = q + self.params.p * (1.0 - np.clip(t, 0.0, 1.0) ** ai)
        return np.where(t < 1.0, low, high)

    def cond_c_upper_quantile(self, u) -> np.ndarray:
        if self.params.mode != "RWT":
            raise ValueError("conditioned conductance law exists only under RWT")
        return np.asarray(u, dtype=float) ** (-1.0 / float(self.params.alpha_inf))

    def cond_r_upper_quantile(self, u) -> np.ndarray:
        return np.asarray(u, dtype=float) ** (-1.0 / self.params.alpha0)

    def mean_c(self) -> float:
        """E[c]; finite only under RW where it equals alpha0/(1+alpha0)."""
        if self.params.mode == "RWT":
            return math.inf
        a0 = self.params.alpha0
        return a0 / (1.0 + a0)


def sample_edge_law(params: ModelParams, rng: np.random.Generator, size: int | None = None):
    """Draw (c, r) from the default law; scalar draw when ``size`` is None."""
    c = DefaultLaw(params).sample(rng, 1 if size is None else size)
    r = 1.0 / c
    if size is None:
        return float(c[0]), float(r[0])
    return c, r


# ---------------------------------------------------------------------------
# scales


def _wide(log_value: float):
    """exp(log_value) as a float, or as a Decimal when the float overflows."""
    if log_value < 709.0:
        return math.exp(log_value)
    return Decimal(log_value).exp()


def _invert_survival(sf, n: int) -> float:
    """inf{t > 0 : sf(t) <= 1/n} by bisection on log t."""
    target = 1.0 / n
    lo, hi = -1.0, 1.0
    while float(sf(math.exp(hi))) > target:
        lo, hi = hi, 2.0 * hi
        if hi > 700:
            raise OverflowError("survival inversion exceeded the float range")
    while float(sf(math.exp(lo))) <= target:
        hi, lo = lo, 2.0 * lo - 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(sf(math.exp(mid))) <= target:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-13:
            break
    return math.exp(hi)


@dataclass(frozen=True)
class ScaleSet:
    n: int
    d_n0: float
    a_n: float
    d_ninf: float | None = None
    b_n: float | None = None
    d_star_n0: float | None = None
    d_star_ninf: float | None = None
    log_d_n0: float = field(default=0.0, repr=False)
    log_d_ninf: float | None = field(default=None, repr=False)


def scaling_terms(params: ModelParams, n: int, law: EdgeLaw | None = None) -> ScaleSet:
    """Scale sequences d_n0, d_ninf, a_n, b_n and the conditioned-law scales.

    Closed forms for the default law.  A custom law falls back to numeric
    inversion of its survival functions.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    a0 = params.alpha0
    if law is None or isinstance(law, DefaultLaw):
        q = 1.0 - params.trap_weight
        log_d0 = math.log(q * n) / a0
        log_ds0 = math.log(n) / a0
        if params.mode == "RW":
            return ScaleSet(
                n=n,
                d_n0=_wide(log_d0),
                a_n=_wide(math.log(n) + log_d0),
                d_star_n0=_wide(log_ds0),
                log_d_n0=log_d0,
            )
        ai = float(params.alpha_inf)
        log_dinf = math.log(params.p * n) / ai
        return ScaleSet(
            n=n,
            d_n0=_wide(log_d0),
            a_n=_wide(math.log(n) + log_d0),
            d_ninf=_wide(log_dinf),
            b_n=_wide(log_dinf + log_d0),
            d_star_n0=_wide(log_ds0),
            d_star_ninf=_wide(math.log(n) / ai),
            log_d_n0=log_d0,
            log_d_ninf=log_dinf,
        )
    d0 = _invert_survival(law.survival_r, n)
    ds0 = float(law.cond_r_upper_quantile(1.0 / n))
    if params.mode == "RW":
        return ScaleSet(n=n, d_n0=d0, a_n=n * d0, d_star_n0=ds0, log_d_n0=math.log(d0))
    dinf = _invert_survival(law.survival_c, n)
    dsinf = float(law.cond_c_upper_quantile(1.0 / n))
    return ScaleSet(
        n=n,
        d_n0=d0,
        a_n=n * d0,
        d_ninf=dinf,
        b_n=dinf * d0,
        d_star_n0=ds0,
        d_star_ninf=dsinf,
        log_d_n0=math.log(d0),
        log_d_ninf=math.log(dinf),
    )


# ---------------------------------------------------------------------------
# one-sided stable marginal


def _kanter_a(theta: float, alpha: float) -> float:
    s = math.sin(alpha * theta)
    return (s / math.sin(theta)) ** (1.0 / (1.0 - alpha)) * math.sin((1.0 - alpha) * theta) / s


def _std_series_sf(alpha: float, x):
    # convergent for every x > 0 when alpha < 1; used where x**-alpha is small
    y = np.asarray(x, dtype=float) ** (-alpha)
    out = np.zeros_like(y)
    for k in range(1, 40):
        coef = (-1) ** (k + 1) * math.exp(math.lgamma(alpha * k) - math.lgamma(k + 1))
        out += coef * math.sin(math.pi * alpha * k) / math.pi * y**k
    return out


def _std_cdf_sf(alpha: float, x: float) -> tuple[float, float]:
    """CDF and survival of the stable law with Laplace transform exp(-u**alpha)."""
    if x ** (-alpha) < 0.05:
        s = float(_std_series_sf(alpha, x))
        return 1.0 - s, s
    z = x ** (-alpha / (1.0 - alpha))
    # the integrand is sharply peaked at theta = 0 when z is large
    brk = min(math.pi / 2, 8.0 / math.sqrt(z)) if z > 1.0 else math.pi / 2

    def cdf_f(t: float) -> float:
        return math.exp(-z * _kanter_a(t, alpha))

    def sf_f(t: float) -> float:
        return -math.expm1(-z * _kanter_a(t, alpha))

    opts = dict(epsabs=1e-14, epsrel=1e-11, limit=200)
    c = integrate.quad(cdf_f, 0.0, brk, **opts)[0] + integrate.quad(cdf_f, brk, math.pi, **opts)[0]
    s = integrate.quad(sf_f, 0.0, brk, **opts)[0] + integrate.quad(sf_f, brk, math.pi, **opts)[0]
    return c / math.pi, s / math.pi


def _scale(alpha: float) -> float:
    # S = Gamma(1-alpha)**(1/alpha) * S_std for exponent Gamma(1-alpha)*u**alpha
    return math.gamma(1.0 - alpha) ** (1.0 / alpha)


def stable_marginal_cdf(alpha: float, x: float) -> float:
    """P(S(1) <= x) for the subordinator with Levy measure alpha*x**(-1-alpha) dx."""
    _check_alpha(alpha)
    if not x > 0:
        raise ValueError("x must be positive")
    if math.isinf(x):
        return 1.0
    return _std_cdf_sf(alpha, x / _scale(alpha))[0]


def stable_marginal_sf(alpha: float, x: float) -> float:
    """P(S(1) > x), accurate in the far tail."""
    _check_alpha(alpha)
    if not x > 0:
        raise ValueError("x must be positive")
    if math.isinf(x):
        return 0.0
    return _std_cdf_sf(alpha, x / _scale(alpha))[1]


def _tail_series(alpha: float, x: np.ndarray) -> np.ndarray:
    return _std_series_sf(alpha, np.asarray(x, dtype=float) / _scale(alpha))


class StableTailTable:
    """Monotone interpolation table of log P(S(1) > x) on 2048 log-spaced knots.

    Beyond the top knot the asymptotic series of the tail is used; below the
    bottom knot the survival is 1 to double precision.
    """

    def __init__(self, alpha: float, knots: int = 2048):
        _check_alpha(alpha)
        self.alpha = alpha
        sc = _scale(alpha)
        # lower end: CDF below 1e-300; upper end: the tail series takes over
        lo = sc * (1.0 / 690.0) ** ((1.0 - alpha) / alpha)
        hi = sc * 0.04 ** (-1.0 / alpha)
        self.log_x = np.linspace(math.log(lo), math.log(hi), knots)
        sf = np.array([_std_cdf_sf(alpha, math.exp(lx) / sc)[1] for lx in self.log_x])
        self.log_sf = np.log(sf)
        self._fwd = PchipInterpolator(self.log_x, self.log_sf, extrapolate=False)
        self.x_lo, self.x_hi = lo, hi
        # inverse map restricted to the strictly informative part
        keep = self.log_sf < -1e-14
        keep &= np.concatenate(([True], np.diff(self.log_sf) < 0))
        self._inv = PchipInterpolator(self.log_sf[keep][::-1], self.log_x[keep][::-1], extrapolate=False)
        self._inv_lo = self.log_sf[keep].min()
        self._inv_hi = self.log_sf[keep].max()

    def log_survival(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros_like(x)
        inside = (x > self.x_lo) & (x < self.x_hi)
        out[inside] = self._fwd(np.log(x[inside]))
        far = x >= self.x_hi
        if far.any():
            out[far] = np.log(_tail_series(self.alpha, x[far]))
        return out

    def survival(self, x) -> np.ndarray:
        return np.exp(self.log_survival(x))

    def inverse_survival(self, u) -> np.ndarray:
        """Smallest x with P(S(1) > x) <= u, for u in (0, 1)."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        lu = np.log(u)
        out = np.empty_like(u)
        mid = (lu >= self._inv_lo) & (lu <= self._inv_hi)
        out[mid] = np.exp(self._inv(lu[mid]))
        low = lu < self._inv_lo
        # far tail: invert the leading term, then one Newton correction
        if low.any():
            x0 = u[low] ** (-1.0 / self.alpha)
            ratio = _tail_series(self.alpha, x0) / u[low]
            out[low] = x0 * ratio ** (1.0 / self.alpha)
        out[lu > self._inv_hi] = self.x_lo
        return out


@lru_cache(maxsize=16)
def stable_tail_table(alpha: float) -> StableTailTable:
    return StableTailTable(alpha)


# ---------------------------------------------------------------------------
# subordinators


@dataclass(frozen=True)
class SubordinatorPath:
    """Two-sided alpha-stable subordinator on [-K, K] with jumps above epsilon.

    Evaluation adds the compensation drift (the mean of the discarded small
    jumps).  ``tilt_sign`` is -1 for the resistance process and +1 for the
    conductance process; the tilt factor of an atom at u is
    exp(tilt_sign * 2 * lam * u).
    """

    alpha: float
    K: float
    epsilon: float
    locations: np.ndarray
    jumps: np.ndarray
    tilt_sign: int = -1

    @property
    def compensation_rate(self) -> float:
        return compensation_rate(self.alpha, self.epsilon)

    def tilted_jumps(self, lam: float) -> np.ndarray:
        if lam == 0.0:
            return self.jumps
        return self.jumps * np.exp(self.tilt_sign * 2.0 * lam * self.locations)

    def drift_integral(self, t, lam: float = 0.0) -> np.ndarray:
        """Integral of the tilted drift over (0, t] (negative for t < 0)."""
        t = np.asarray(t, dtype=float)
        k = self.tilt_sign * 2.0 * lam
        if k == 0.0:
            return self.compensation_rate * t
        return self.compensation_rate * np.expm1(k * t) / k

    def value(self, t, lam: float = 0.0):
        """S(t): tilted jumps in (0, t], or minus those in (t, 0] for t < 0."""
        t_arr = np.asarray(t, dtype=float)
        w = self.tilted_jumps(lam)
        csum = np.concatenate(([0.0], np.cumsum(w)))
        i0 = np.searchsorted(self.locations, 0.0, side="right")
        it = np.searchsorted(self.locations, t_arr, side="right")
        out = csum[it] - csum[i0] + self.drift_integral(t_arr, lam)
        return float(out) if out.ndim == 0 else out

    def left_limit(self, t, lam: float = 0.0):
        """S(t-)."""
        t_arr = np.asarray(t, dtype=float)
        w = self.tilted_jumps(lam)
        csum = np.concatenate(([0.0], np.cumsum(w)))
        i0 = np.searchsorted(self.locations, 0.0, side="right")
        it = np.searchsorted(self.locations, t_arr, side="left")
        out = csum[it] - csum[i0] + self.drift_integral(t_arr, lam)
        return float(out) if out.ndim == 0 else out

    def cell_increments(self, lo: float, width: float, count: int, lam: float = 0.0) -> np.ndarray:
        """Increments S(lo+(k+1)w) - S(lo+kw), k < count, summed atom by atom."""
        edges_lo = lo + width * np.arange(count)
        k = np.floor((self.locations - lo) / width).astype(np.int64)
        # atoms sitting exactly on a cell's right end belong to that cell
        on_edge = (k >= 1) & (lo + width * k == self.locations)
        k[on_edge] -= 1
        inside = (k >= 0) & (k < count)
        inc = np.bincount(k[inside], weights=self.tilted_jumps(lam)[inside], minlength=count)
        drift = self.drift_integral(edges_lo + width, lam) - self.drift_integral(edges_lo, lam)
        return inc + drift

    def atoms_between(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
        """Atoms with a < u <= b."""
        i = np.searchsorted(self.locations, a, side="right")
        j = np.searchsorted(self.locations, b, side="right")
        return self.locations[i:j], self.jumps[i:j]


def compensation_rate(alpha: float, epsilon: float) -> float:
    """Mean of the jumps below epsilon per unit length."""
    return alpha * epsilon ** (1.0 - alpha) / (1.0 - alpha)


def sample_subordinator(
    alpha: float,
    K: float,
    epsilon: float,
    rng: np.random.Generator,
    tilt_sign: int = -1,
) -> SubordinatorPath:
    """Poisson atoms of rate epsilon**-alpha on [-K, K] with jump survival (x/epsilon)**-alpha."""
    _check_alpha(alpha)
    if not K > 0 or not epsilon > 0:
        raise ValueError("K and epsilon must be positive")
    count = rng.poisson(2.0 * K * epsilon ** (-alpha))
    loc = rng.uniform(-K, K, size=count)
    jumps = epsilon * (1.0 - rng.random(count)) ** (-1.0 / alpha)
    order = np.argsort(loc)
    return SubordinatorPath(alpha, float(K), float(epsilon), loc[order], jumps[order], tilt_sign)
