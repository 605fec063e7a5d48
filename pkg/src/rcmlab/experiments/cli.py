"""Command line entry point: ``rcmlab <command> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys

import numpy as np

from ..environment import Environment, generate_environment
from ..heavy_tails import DefaultLaw, ModelParams, sample_subordinator, scaling_terms
from ..limit_sim import build_speed_measure_walls, sample_trap_measure, simulate_quasi_diffusion, start_atom_from
from ..walk_sim import WalkOptions, simulate_walk
from .config import EXPERIMENTS, ExperimentConfig, default_config
from .runners import curves_csv, curves_jsonl, run_experiment, write_outputs
from .seeding import substream
from .stats import ks_distance, ks_pvalue


def _add_params(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha0", type=float, default=0.8)
    p.add_argument("--alpha-inf", type=float, default=None)
    p.add_argument("--lam", "--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--mode", choices=("RW", "RWT"), default="RW")


def _params(a) -> ModelParams:
    return ModelParams(alpha0=a.alpha0, alpha_inf=a.alpha_inf, lam=a.lam, p=a.p, mode=a.mode)


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_scales(a) -> int:
    params = _params(a)
    rows = []
    for n in a.n:
        s = scaling_terms(params, n)
        rows.append({k: v for k, v in dataclasses.asdict(s).items() if not k.startswith("log_")})
    _emit("".join(json.dumps(r) + "\n" for r in rows), a.out)
    return 0


def cmd_env_gen(a) -> int:
    params = _params(a)
    lines = []
    for i in range(a.count):
        env = generate_environment(params, a.n, a.K, substream(a.seed, "env-gen", i, -1), seed=a.seed)
        lines.append(env.to_json() + "\n")
    _emit("".join(lines), a.out)
    return 0


def cmd_walk_run(a) -> int:
    if a.env:
        with open(a.env) as fh:
            env = Environment.from_json(fh.readlines()[a.line])
    else:
        env = generate_environment(_params(a), a.n, a.K, substream(a.seed, "walk-run", 0, -1))
    opts = WalkOptions(collapse_threshold=a.collapse_threshold, record=True)
    path = simulate_walk(env, a.x0, a.t_end, sorted(a.obs), opts, substream(a.seed, "walk-run", 0, 0))
    if a.format == "csv":
        if not a.out:
            raise SystemExit("walk run --format csv needs --out")
        path.to_csv(a.out)
    else:
        t, x = path.visits()
        rec = {
            "end_time": path.end_time,
            "end_position": path.end_position,
            "running_max": path.running_max,
            "obs_times": path.obs_times.tolist(),
            "obs_positions": path.obs_positions.tolist(),
            "obs_maxima": path.obs_maxima.tolist(),
            "events": len(t),
            "collapses": path.n_collapse,
        }
        _emit(json.dumps(rec) + "\n", a.out)
    return 0


def cmd_limit_run(a) -> int:
    params = _params(a)
    rng = substream(a.seed, "limit-run", 0, 0)
    if params.mode == "RW":
        sub0 = sample_subordinator(params.alpha0, a.K, a.epsilon, rng)
        meas = build_speed_measure_walls(
            sub0, params.lam, a.K, a.grid_step, DefaultLaw(params).mean_c(), a.grid_step ** (1.0 / params.alpha0)
        )
        start = meas.index_of_preimage(0.0)
    else:
        _, _, meas = sample_trap_measure(params, a.K, a.weight_cutoff, rng)
        start = start_atom_from(meas, 0.0, rng)
    obs = sorted(a.obs)
    path = simulate_quasi_diffusion(meas, start, a.t_end, obs, rng, record=False)
    rec = {
        "atoms": meas.size,
        "obs_times": obs,
        "position": [float(meas.v[i]) for i in path.obs_atoms],
        "running_max": [float(meas.v[i]) for i in path.obs_max],
        "steps": path.steps,
    }
    if a.measure_out:
        with open(a.measure_out, "w") as fh:
            fh.write(meas.to_json())
    _emit(json.dumps(rec) + "\n", a.out)
    return 0


def cmd_exp(a) -> int:
    if a.config:
        with open(a.config) as fh:
            cfg = ExperimentConfig.from_json(fh.read())
    else:
        cfg = default_config(a.kind)
    if a.seed is not None:
        cfg = cfg.with_(master_seed=a.seed)
    out = a.out or cfg.out_dir
    result = run_experiment(a.kind, cfg, a.workers)
    if out:
        write_outputs(result, cfg, out, a.format)
    else:
        sys.stdout.write(curves_csv(result) if a.format == "csv" else curves_jsonl(result))
    return 0


def _read_numbers(path: str) -> np.ndarray:
    vals = []
    with open(path) as fh:
        for line in fh:
            for tok in line.replace(",", " ").split():
                v = float(tok)
                if math.isfinite(v):
                    vals.append(v)
    return np.array(vals)


def cmd_stats_ks(a) -> int:
    x, y = _read_numbers(a.a), _read_numbers(a.b)
    _emit(json.dumps({"ks": ks_distance(x, y), "pvalue": ks_pvalue(x, y), "n_a": x.size, "n_b": y.size}) + "\n", a.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rcmlab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scales", help="print the scale sequences")
    _add_params(p)
    p.add_argument("--n", type=int, nargs="+", default=[1024])
    p.add_argument("--out")
    p.set_defaults(func=cmd_scales)

    env = sub.add_parser("env", help="environments").add_subparsers(dest="env_command", required=True)
    p = env.add_parser("gen", help="generate environments as JSON lines")
    _add_params(p)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_env_gen)

    walk = sub.add_parser("walk", help="discrete walks").add_subparsers(dest="walk_command", required=True)
    p = walk.add_parser("run", help="simulate one walk")
    _add_params(p)
    p.add_argument("--env", help="JSON-lines environment file")
    p.add_argument("--line", type=int, default=0)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--x0", type=int, default=0)
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--obs", type=float, nargs="*", default=[])
    p.add_argument("--collapse-threshold", type=float, default=50.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("csv", "jsonl"), default="jsonl")
    p.add_argument("--out")
    p.set_defaults(func=cmd_walk_run)

    lim = sub.add_parser("limit", help="limit processes").add_subparsers(dest="limit_command", required=True)
    p = lim.add_parser("run", help="simulate one quasi-diffusion")
    _add_params(p)
    p.add_argument("--K", type=float, default=2.0)
    p.add_argument("--t-end", type=float, default=1.0)
    p.add_argument("--obs", type=float, nargs="*", default=[])
    p.add_argument("--grid-step", type=float, default=0.01)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--weight-cutoff", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--measure-out")
    p.add_argument("--out")
    p.set_defaults(func=cmd_limit_run)

    p = sub.add_parser("exp", help="run an experiment")
    p.add_argument("kind", choices=EXPERIMENTS)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.set_defaults(func=cmd_exp)

    st = sub.add_parser("stats", help="statistics").add_subparsers(dest="stats_command", required=True)
    p = st.add_parser("ks", help="two-sample KS distance between files of numbers")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats_ks)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
