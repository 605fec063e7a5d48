"""Experiment runners: discrete walks against their scaling limits.

Work is split into tasks, one per (n, environment) or per chunk of limit
replicas.  Every task draws from its own hashed substream and results are
folded in task order, so outputs do not depend on the worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from .._kernels import MacroCache
from ..coupling import build_bundle, build_coupled_environment
from ..environment import generate_environment, rescaled_processes
from ..heavy_tails import DefaultLaw, sample_subordinator, scaling_terms
from ..limit_sim import (
    build_speed_measure_walls,
    gap_at_atom,
    sample_trap_measure,
    simulate_quasi_diffusion,
    start_atom_from,
    theta_bar_from_samples,
    theta_bar_samples,
)
from ..walk_sim import ObservableSpec, WalkOptions, simulate_walk, walk_observables
from .config import ExperimentConfig
from .j1 import j1_upper_bound, path_from_step_process, path_from_subordinator
from .seeding import ENV_STREAM, substream, substream_seed
from .stats import ks_distance, mean_interval, proportion

LIMIT_CHUNK = 50
CURVE_COLUMNS = ("estimator", "n", "h", "estimate", "stderr", "ci_lo", "ci_hi", "replicas", "sentinel_fraction")


@dataclass
class CurveRow:
    estimator: str
    n: int | None
    h: float | None
    estimate: float
    stderr: float
    ci_lo: float
    ci_hi: float
    replicas: int
    sentinel_fraction: float = 0.0


@dataclass
class RunResult:
    experiment: str
    rows: list[CurveRow]
    quenched: list[dict] = field(default_factory=list)
    samples: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def row(self, estimator: str, n=None, h=None) -> CurveRow:
        for r in self.rows:
            if r.estimator == estimator and r.n == n and (h is None or r.h == h):
                return r
        raise KeyError((estimator, n, h))


def _pmap(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def _limit_chunks(cfg: ExperimentConfig):
    R = cfg.limit_replicas
    return [(k, min(LIMIT_CHUNK, R - k)) for k in range(0, R, LIMIT_CHUNK)]


def _prop_row(name, n, h, hits, trials, sentinel=0.0) -> CurveRow:
    p, se, (lo, hi) = proportion(int(hits), int(trials))
    return CurveRow(name, n, h, p, se, lo, hi, int(trials), sentinel)


def _env_for(cfg: ExperimentConfig, exp: str, e: int):
    rng = substream(cfg.master_seed, exp, e, ENV_STREAM)
    return generate_environment(cfg.params, _n_of(exp), cfg.K, rng)


def _n_of(exp: str) -> int:
    return int(exp.rsplit("=", 1)[1])


def _fold_events(cfg, name, n, results, h_list):
    """Annealed rows plus per-environment (quenched) values from boolean events."""
    rows = []
    quenched = []
    ev = np.array([r for env_res in results for r in env_res], dtype=bool).reshape(-1, len(h_list))
    per_env = [np.array(r, dtype=bool).reshape(-1, len(h_list)) for r in results]
    for k, h in enumerate(h_list):
        q = [float(a[:, k].mean()) for a in per_env]
        quenched.extend({"estimator": name, "n": n, "h": h, "env": i, "estimate": v} for i, v in enumerate(q))
        row = _prop_row(name, n, h, ev[:, k].sum(), ev.shape[0])
        # annealed value is the mean of the quenched ones
        row.estimate = math.fsum(q) / len(q)
        rows.append(row)
    return rows, quenched


# ---------------------------------------------------------------------------
# aging with walls


def _aging_walls_task(arg):
    cfg, exp, e = arg
    n = _n_of(exp)
    env = _env_for(cfg, exp, e)
    sc = scaling_terms(cfg.params, n)
    hs = sorted(cfg.h_list)
    obs = [sc.a_n] + [h * sc.a_n for h in hs]
    cache = MacroCache(2 * cfg.K * n, cfg.macro_block) if cfg.macro_block else None
    opts = WalkOptions(
        collapse_threshold=cfg.collapse_threshold,
        macro_block=cfg.macro_block,
        record=False,
        track_from=0,
        stop_after_exceed=True,
    )
    out = []
    for r in range(cfg.replicas):
        p = simulate_walk(env, 0, obs[-1], obs, opts, substream(cfg.master_seed, exp, e, r), cache)
        hit, exc = p.hit_time, p.exceed_time
        for h in cfg.h_list:
            t = h * sc.a_n
            out.append(bool(0 <= hit <= t and (exc < 0 or exc > t)))
    return out


def _limit_walls_measure(cfg, rng):
    a0 = cfg.params.alpha0
    K = cfg.limit_K or cfg.K
    sub0 = sample_subordinator(a0, K, cfg.subordinator_epsilon, rng)
    floor = cfg.jump_floor if cfg.jump_floor is not None else cfg.grid_step ** (1.0 / a0)
    meas = build_speed_measure_walls(sub0, cfg.params.lam, K, cfg.grid_step, DefaultLaw(cfg.params).mean_c(), floor)
    return sub0, meas


def _limit_aging_walls_task(arg):
    cfg, start, count = arg
    hs = sorted(cfg.h_list)
    out = []
    for k in range(start, start + count):
        rng = substream(cfg.master_seed, "aging-walls/limit", 0, k)
        _, meas = _limit_walls_measure(cfg, rng)
        path = simulate_quasi_diffusion(meas, meas.index_of_preimage(0.0), hs[-1], [1.0] + hs, rng, ref_obs=0, record=False)
        top = path.obs_max[0]
        for h in cfg.h_list:
            out.append(bool(path.obs_window_max[1 + hs.index(h)] == top))
    return out


def run_aging_walls(cfg: ExperimentConfig, workers: int = 1) -> RunResult:
    if cfg.params.mode != "RW":
        raise ValueError("aging with walls needs mode RW")
    if any(h <= 1 for h in cfg.h_list):
        raise ValueError("aging needs h > 1")
    t0 = time.perf_counter()
    rows, quenched = [], []
    for n in cfg.n_list:
        exp = f"aging-walls/n={n}"
        res = _pmap(_aging_walls_task, [(cfg, exp, e) for e in range(cfg.envs_for(n))], workers)
        r, q = _fold_events(cfg, "walk", n, res, cfg.h_list)
        rows += r
        quenched += q
    res = _pmap(_limit_aging_walls_task, [(cfg, s, c) for s, c in _limit_chunks(cfg)], workers)
    ev = np.array([x for chunk in res for x in chunk], dtype=bool).reshape(-1, len(cfg.h_list))
    for k, h in enumerate(cfg.h_list):
        rows.append(_prop_row("limit", None, h, ev[:, k].sum(), ev.shape[0]))
    return RunResult("aging-walls", rows, quenched, wall_clock=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# aging with traps


def _aging_traps_task(arg):
    cfg, exp, e = arg
    n = _n_of(exp)
    env = _env_for(cfg, exp, e)
    sc = scaling_terms(cfg.params, n)
    hs = sorted(cfg.h_list)
    obs = [sc.b_n] + [h * sc.b_n for h in hs]
    cache = MacroCache(2 * cfg.K * n, cfg.macro_block) if cfg.macro_block else None
    opts = WalkOptions(
        collapse_threshold=cfg.collapse_threshold, macro_block=cfg.macro_block, record=False, max_tracking=False
    )
    out = []
    for r in range(cfg.replicas):
        p = simulate_walk(env, 0, obs[-1], obs, opts, substream(cfg.master_seed, exp, e, r), cache)
        x1 = p.obs_positions[0]
        for h in cfg.h_list:
            out.append(bool(abs(int(p.obs_positions[1 + hs.index(h)]) - int(x1)) <= 1))
    return out


def _limit_aging_traps_task(arg):
    cfg, start, count = arg
    hs = sorted(cfg.h_list)
    K = cfg.limit_K or cfg.K
    out = []
    for k in range(start, start + count):
        rng = substream(cfg.master_seed, "aging-traps/limit", 0, k)
        _, _, meas = sample_trap_measure(cfg.params, K, cfg.weight_cutoff, rng)
        s = start_atom_from(meas, 0.0, rng)
        path = simulate_quasi_diffusion(meas, s, hs[-1], [1.0] + hs, rng, record=False)
        for h in cfg.h_list:
            out.append(bool(path.obs_atoms[1 + hs.index(h)] == path.obs_atoms[0]))
    return out


def run_aging_traps(cfg: ExperimentConfig, workers: int = 1) -> RunResult:
    if cfg.params.mode != "RWT":
        raise ValueError("aging with traps needs mode RWT")
    if any(h <= 1 for h in cfg.h_list):
        raise ValueError("aging needs h > 1")
    t0 = time.perf_counter()
    rows, quenched = [], []
    for n in cfg.n_list:
        exp = f"aging-traps/n={n}"
        res = _pmap(_aging_traps_task, [(cfg, exp, e) for e in range(cfg.envs_for(n))], workers)
        r, q = _fold_events(cfg, "walk", n, res, cfg.h_list)
        rows += r
        quenched += q
    res = _pmap(_limit_aging_traps_task, [(cfg, s, c) for s, c in _limit_chunks(cfg)], workers)
    ev = np.array([x for chunk in res for x in chunk], dtype=bool).reshape(-1, len(cfg.h_list))
    for k, h in enumerate(cfg.h_list):
        rows.append(_prop_row("limit", None, h, ev[:, k].sum(), ev.shape[0]))
    return RunResult("aging-traps", rows, quenched, wall_clock=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# sub-aging


def _subaging_task(arg):
    cfg, exp, e = arg
    n = _n_of(exp)
    env = _env_for(cfg, exp, e)
    sc = scaling_terms(cfg.params, n)
    hs = sorted(cfg.h_list)
    cache = MacroCache(2 * cfg.K * n, cfg.macro_block) if cfg.macro_block else None
    fast = WalkOptions(
        collapse_threshold=cfg.collapse_threshold, macro_block=cfg.macro_block, record=False, max_tracking=False
    )
    seg = WalkOptions(collapse_threshold=cfg.collapse_threshold, record=True)
    spec = ObservableSpec(shift=0.0, h_list=tuple(hs))
    window, tail = [], []
    for r in range(cfg.replicas):
        rng = substream(cfg.master_seed, exp, e, r)
        p = simulate_walk(env, 0, sc.b_n, (), fast, rng, cache)
        # Markov restart from X_{b_n}; window ends are observation times so no
        # collapsed stay straddles them
        ends = [h * sc.d_ninf for h in hs]
        q = simulate_walk(env, p.end_position, ends[-1], ends, seg, rng)
        o = walk_observables(q, env, sc, spec)
        for h in cfg.h_list:
            window.append(o.window_range_ok[h])
            tail.append(bool(o.T_n >= h))
    return window, tail


def _limit_subaging_task(arg):
    cfg, start, count = arg
    rng = substream(cfg.master_seed, "subaging/limit", 0, start)
    return theta_bar_samples(cfg.params, count, rng, cfg.limit_K or cfg.K, cfg.weight_cutoff)


def run_subaging(cfg: ExperimentConfig, workers: int = 1) -> RunResult:
    if cfg.params.mode != "RWT":
        raise ValueError("sub-aging needs mode RWT")
    if any(h <= 0 for h in cfg.h_list):
        raise ValueError("sub-aging needs h > 0")
    t0 = time.perf_counter()
    rows, quenched = [], []
    identical = True
    for n in cfg.n_list:
        exp = f"subaging/n={n}"
        res = _pmap(_subaging_task, [(cfg, exp, e) for e in range(cfg.envs_for(n))], workers)
        identical &= all(w == t for w, t in res)
        r, q = _fold_events(cfg, "walk-window", n, [w for w, _ in res], cfg.h_list)
        rows += r
        quenched += q
        r, _ = _fold_events(cfg, "walk-escape-tail", n, [t for _, t in res], cfg.h_list)
        rows += r
    res = _pmap(_limit_subaging_task, [(cfg, s, c) for s, c in _limit_chunks(cfg)], workers)
    a1 = np.concatenate([a for a, _ in res])
    s = np.concatenate([b for _, b in res])
    for h, est in zip((0.0,) + cfg.h_list, theta_bar_from_samples(a1, s, (0.0,) + cfg.h_list)):
        rows.append(CurveRow("theta-bar-limit", None, h, est.value, est.stderr, est.ci[0], est.ci[1], est.replicas))
    out = RunResult("subaging", rows, quenched, wall_clock=time.perf_counter() - t0)
    out.samples["window_equals_tail"] = identical
    return out


# ---------------------------------------------------------------------------
# gap statistic


def _gap_task(arg):
    cfg, exp, e = arg
    n = _n_of(exp)
    env = _env_for(cfg, exp, e)
    sc = scaling_terms(cfg.params, n)
    cache = MacroCache(2 * cfg.K * n, cfg.macro_block) if cfg.macro_block else None
    opts = WalkOptions(collapse_threshold=cfg.collapse_threshold, macro_block=cfg.macro_block, record=False)
    out = []
    for r in range(cfg.replicas):
        p = simulate_walk(env, 0, sc.a_n, (sc.a_n,), opts, substream(cfg.master_seed, exp, e, r), cache)
        xb = int(p.obs_maxima[0])
        out.append(None if xb == env.half_width else env.r_tilt(xb) / sc.d_n0)
    return out


def _limit_gap_task(arg):
    cfg, start, count = arg
    out = []
    for k in range(start, start + count):
        rng = substream(cfg.master_seed, "gap/limit", 0, k)
        sub0, meas = _limit_walls_measure(cfg, rng)
        path = simulate_quasi_diffusion(meas, meas.index_of_preimage(0.0), 1.0, (1.0,), rng, record=False)
        out.append(gap_at_atom(meas, sub0, int(path.obs_max[0]), cfg.params.lam))
    return out


def _split(vals):
    num = np.array([v for v in vals if v is not None], dtype=float)
    return num, 1.0 - num.size / len(vals)


def run_gap(cfg: ExperimentConfig, workers: int = 1) -> RunResult:
    if cfg.params.mode != "RW":
        raise ValueError("the gap experiment needs mode RW")
    t0 = time.perf_counter()
    res = _pmap(_limit_gap_task, [(cfg, s, c) for s, c in _limit_chunks(cfg)], workers)
    lim, lim_sent = _split([v for chunk in res for v in chunk])
    rows = []
    samples = {"limit": lim}
    for n in cfg.n_list:
        exp = f"gap/n={n}"
        res = _pmap(_gap_task, [(cfg, exp, e) for e in range(cfg.envs_for(n))], workers)
        vals, sent = _split([v for env_res in res for v in env_res])
        samples[n] = vals
        d = ks_distance(vals, lim)
        # asymptotic KS null spread as the uncertainty scale
        se = math.sqrt((vals.size + lim.size) / (vals.size * lim.size))
        rows.append(CurveRow("gap-ks", n, 1.0, d, se, max(0.0, d - 1.36 * se), min(1.0, d + 1.36 * se), vals.size, sent))
        m, s, (lo, hi) = mean_interval(np.log(vals))
        rows.append(CurveRow("gap-log-mean", n, 1.0, m, s, lo, hi, vals.size, sent))
    m, s, (lo, hi) = mean_interval(np.log(lim))
    rows.append(CurveRow("gap-log-mean-limit", None, 1.0, m, s, lo, hi, lim.size, lim_sent))
    return RunResult("gap", rows, samples=samples, wall_clock=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# J1 diagnostic

DELTA_CANDIDATES = (0.2, 0.15, 0.1, 0.07, 0.05, 0.03, 0.02)


def _j1_task(arg):
    cfg, b = arg
    p = cfg.params
    n_max = max(cfg.n_list)
    seed = substream_seed(cfg.master_seed, "j1", b, ENV_STREAM)
    bundle = build_bundle(p, cfg.K, n_max, seed)
    q = 1.0 - p.trap_weight
    g = path_from_subordinator(bundle.sub0, cfg.K, p.lam, q, q ** (-1.0 / p.alpha0))
    fs = []
    for n in cfg.n_list:
        env, _ = build_coupled_environment(bundle, p, n, cfg.K)
        s0 = rescaled_processes(env, scaling_terms(p, n))[0]
        fs.append(path_from_step_process(s0))
    # the largest delta at which every n sees the same count of big jumps
    for delta in DELTA_CANDIDATES:
        bounds = [j1_upper_bound(f, g, delta) for f in fs]
        if all(x.ok for x in bounds):
            return delta, [x.value for x in bounds]
    return None, [math.inf] * len(fs)


def run_j1(cfg: ExperimentConfig, workers: int = 1) -> RunResult:
    t0 = time.perf_counter()
    res = _pmap(_j1_task, [(cfg, b) for b in range(cfg.bundles)], workers)
    rows = []
    quenched = []
    for k, n in enumerate(cfg.n_list):
        vals = [v[k] for _, v in res if math.isfinite(v[k])]
        m, s, (lo, hi) = mean_interval(vals) if vals else (math.inf, 0.0, (math.inf, math.inf))
        rows.append(CurveRow("j1-bound", n, None, m, s, lo, hi, len(vals), 1.0 - len(vals) / len(res)))
        quenched += [{"estimator": "j1-bound", "n": n, "h": None, "env": b, "estimate": v[k]} for b, (_, v) in enumerate(res)]
    out = RunResult("j1", rows, quenched, wall_clock=time.perf_counter() - t0)
    out.samples["delta"] = [d for d, _ in res]
    return out


RUNNERS = {
    "aging-walls": run_aging_walls,
    "aging-traps": run_aging_traps,
    "subaging": run_subaging,
    "gap": run_gap,
    "j1": run_j1,
}


def run_experiment(kind: str, cfg: ExperimentConfig, workers: int = 1) -> RunResult:
    if kind not in RUNNERS:
        raise ValueError(f"unknown experiment {kind!r}")
    return RUNNERS[kind](cfg, workers)


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def curves_csv(result: RunResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for r in result.rows:
        w.writerow([_fmt(getattr(r, c)) for c in CURVE_COLUMNS])
    return buf.getvalue()


def curves_jsonl(result: RunResult) -> str:
    return "".join(json.dumps({c: getattr(r, c) for c in CURVE_COLUMNS}) + "\n" for r in result.rows)


def write_outputs(result: RunResult, cfg: ExperimentConfig, out_dir: str, fmt: str = "csv") -> None:
    os.makedirs(out_dir, exist_ok=True)
    if fmt == "csv":
        with open(os.path.join(out_dir, "curves.csv"), "w") as fh:
            fh.write(curves_csv(result))
    elif fmt == "jsonl":
        with open(os.path.join(out_dir, "curves.jsonl"), "w") as fh:
            fh.write(curves_jsonl(result))
    else:
        raise ValueError("format must be csv or jsonl")
    if result.quenched:
        with open(os.path.join(out_dir, "quenched.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["estimator", "n", "h", "env", "estimate"])
            for q in result.quenched:
                w.writerow([_fmt(q[k]) for k in ("estimator", "n", "h", "env", "estimate")])
    meta = {
        "experiment": result.experiment,
        "config_sha256": cfg.digest(),
        "config": cfg.to_dict(),
        "seed": cfg.master_seed,
        "version": __version__,
        "wall_clock_seconds": result.wall_clock,
    }
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
