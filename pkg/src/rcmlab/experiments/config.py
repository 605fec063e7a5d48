"""Experiment configuration, loaded from JSON with strict key checking."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

from ..heavy_tails import ModelParams

EXPERIMENTS = ("aging-walls", "aging-traps", "subaging", "gap", "j1")


@dataclass(frozen=True)
class ExperimentConfig:
    params: ModelParams
    n_list: tuple[int, ...]
    K: int = 2
    h_list: tuple[float, ...] = (1.25, 1.5, 2.0, 4.0)
    replicas: int = 1
    environments: int = 200
    master_seed: int = 0
    estimator: str = "annealed"
    out_dir: str | None = None
    collapse_threshold: float = 50.0
    grid_step: float = 0.01
    weight_cutoff: float = 1e-4
    loc_tol: float | None = None
    weight_tol: float = 0.05
    macro_block: int = 32
    limit_replicas: int = 2000
    limit_K: float | None = None
    jump_floor: float | None = None
    subordinator_epsilon: float = 1e-5
    delta_hat: float = 0.1
    bundles: int = 10
    environments_per_n: dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.n_list or any(int(n) < 1 for n in self.n_list):
            raise ValueError("n_list must hold positive integers")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.replicas < 1 or self.environments < 1 or self.limit_replicas < 1:
            raise ValueError("replica and environment counts must be positive")
        if self.estimator not in ("annealed", "quenched"):
            raise ValueError("estimator must be 'annealed' or 'quenched'")
        if any(h < 0 for h in self.h_list):
            raise ValueError("h values must be nonnegative")
        if self.grid_step <= 0 or self.weight_cutoff <= 0 or self.subordinator_epsilon <= 0:
            raise ValueError("grid_step, weight_cutoff and subordinator_epsilon must be positive")
        if not 0 < self.delta_hat < 1:
            raise ValueError("delta_hat must lie in (0, 1)")
        if self.macro_block < 0 or self.collapse_threshold < 0:
            raise ValueError("macro_block and collapse_threshold must be nonnegative")
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(self, "h_list", tuple(float(h) for h in self.h_list))
        object.__setattr__(self, "environments_per_n", {int(k): int(v) for k, v in self.environments_per_n.items()})

    def envs_for(self, n: int) -> int:
        return self.environments_per_n.get(n, self.environments)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = self.params.to_dict()
        d["n_list"] = list(self.n_list)
        d["h_list"] = list(self.h_list)
        d["environments_per_n"] = {str(k): v for k, v in sorted(self.environments_per_n.items())}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "params" not in d or "n_list" not in d:
            raise ValueError("config needs 'params' and 'n_list'")
        kw = dict(d)
        kw["params"] = ModelParams.from_dict(d["params"])
        kw["n_list"] = tuple(d["n_list"])
        if "h_list" in d:
            kw["h_list"] = tuple(d["h_list"])
        if "environments_per_n" in d:
            kw["environments_per_n"] = {int(k): int(v) for k, v in d["environments_per_n"].items()}
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def default_config(kind: str) -> ExperimentConfig:
    """Desk-scale presets for each experiment."""
    rw = ModelParams(alpha0=0.8)
    rwt = ModelParams(alpha0=0.8, alpha_inf=0.5, p=0.5, mode="RWT")
    if kind == "aging-walls":
        return ExperimentConfig(params=rw, n_list=(128, 256, 512, 1024), h_list=(1.25, 1.5, 2.0, 4.0), environments=1000)
    if kind == "aging-traps":
        return ExperimentConfig(params=rwt, n_list=(256, 512, 1024), h_list=(1.25, 1.5, 2.0, 4.0), environments=500)
    if kind == "subaging":
        return ExperimentConfig(params=rwt, n_list=(1024,), h_list=(0.25, 0.5, 1.0, 2.0, 4.0), environments=1000)
    if kind == "gap":
        return ExperimentConfig(params=rw, n_list=(256, 1024, 4096), h_list=(1.0,), environments=500)
    if kind == "j1":
        return ExperimentConfig(params=rw, n_list=(256, 1024, 4096), h_list=(), environments=1, K=1, bundles=10)
    raise ValueError(f"unknown experiment {kind!r}; choose from {EXPERIMENTS}")
