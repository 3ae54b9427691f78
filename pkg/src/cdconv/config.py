"""Experiment configuration: YAML files validated into strict models, plus presets."""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from . import expfam, kernels
from .errors import InputError

DEFAULT_ETA = {expfam.GAUSSIAN: 0.1, expfam.RBM: 0.005}
CHECKS = ("spectral", "exactness", "constraints", "drift_constants", "bias", "variance",
          "drift", "hitting_time", "concentration", "lattice")


class ConfigError(InputError):
    """Configuration that fails validation; the message names the field."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class FamilyBlock(_Strict):
    kind: Literal["gaussian_mean", "binary_rbm"]
    Sigma0: list[list[float]] | None = None
    stat_bound_C: float = 6.0
    nv: int = 2
    nh: int = 2

    @model_validator(mode="after")
    def _needs_sigma(self):
        if self.kind == expfam.GAUSSIAN and self.Sigma0 is None:
            raise ValueError("Sigma0 is required for gaussian_mean")
        if self.kind == expfam.RBM and self.Sigma0 is not None:
            raise ValueError("Sigma0 is not allowed for binary_rbm")
        return self


class DomainBlock(_Strict):
    lower: list[float]
    upper: list[float]


class KernelBlock(_Strict):
    kind: Literal["rbm_gibbs", "gaussian_gibbs", "exact_resample"]


class CDBlock(_Strict):
    eta: float | None = None
    m: int = 3
    steps: int = 2000
    starts: list[list[float]]
    projection: bool = False
    seeds: list[int] | None = None
    burn_in: int | None = None


class DataBlock(_Strict):
    theta_star: list[float]
    n: int | None = None
    n_list: list[int] | None = None
    seed: int = 0
    seeds_per_n: int = 20


class DiagnosticsBlock(_Strict):
    checks: list[Literal[CHECKS]] = list(CHECKS)  # type: ignore[valid-type]
    gamma1: float = 0.1
    gamma2: float = 0.15
    beta: float | None = None
    lambda_grid: int = 7
    lipschitz_grid: int = 7
    alpha_grid: int = 5
    alpha_chain_length: int = 100_000
    constraint_grid: int = 5
    exactness_draws: int = 100_000
    replicates: int = 1000
    bias_points: int = 3
    drift_replicates: int = 10_000
    drift_radii: list[float] = [2.0, 3.0, 4.0, 6.0, 8.0]
    hitting_replicates: int = 200
    hitting_horizon: int = 1_000_000
    concentration_steps: int | None = None


class GridBlock(_Strict):
    lower: float
    upper: float
    points_per_dim: int
    replicates: int = 5


class ExperimentConfig(_Strict):
    family: FamilyBlock
    kernel: KernelBlock
    cd: CDBlock
    data: DataBlock
    domain: DomainBlock | None = None
    diagnostics: DiagnosticsBlock = DiagnosticsBlock()
    grid: GridBlock | None = None
    out: str | None = None


class Resolved:
    """Validated config turned into library objects."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        fb = cfg.family
        with _field("family"):
            if fb.kind == expfam.GAUSSIAN:
                self.family = expfam.Family.gaussian(fb.Sigma0, fb.stat_bound_C)
            else:
                self.family = expfam.Family.rbm(fb.nv, fb.nh)
        d = self.family.d
        with _field("domain"):
            self.domain = (expfam.ParamDomain(cfg.domain.lower, cfg.domain.upper)
                           if cfg.domain else expfam.ParamDomain.default_for(self.family))
            if self.domain.d != d:
                raise InputError(f"needs {d} coordinates, got {self.domain.d}")
        with _field("kernel.kind"):
            self.kernel = kernels.Kernel(cfg.kernel.kind, self.family)
        c = cfg.cd
        self.eta = DEFAULT_ETA[fb.kind] if c.eta is None else c.eta
        _check(self.eta > 0, "cd.eta", "must be positive")
        _check(c.m >= 1, "cd.m", "must be at least 1")
        _check(c.steps >= 0, "cd.steps", "must be non-negative")
        _check(len(c.starts) >= 1, "cd.starts", "needs at least one start")
        for k, s in enumerate(c.starts):
            _check(len(s) == d, f"cd.starts[{k}]", f"needs {d} coordinates")
            _check(self.domain.contains(s), f"cd.starts[{k}]", "lies outside the domain")
        self.starts = np.array(c.starts, dtype=float)
        self.seeds = list(c.seeds) if c.seeds is not None else [cfg.data.seed]
        _check(all(s >= 0 for s in self.seeds), "cd.seeds", "must be non-negative")
        _check(c.burn_in is None or 0 <= c.burn_in < max(c.steps, 1), "cd.burn_in",
               "must lie in [0, steps)")
        self.burn_in = c.steps // 2 if c.burn_in is None else c.burn_in
        db = cfg.data
        _check(len(db.theta_star) == d, "data.theta_star", f"needs {d} coordinates")
        self.theta_star = np.array(db.theta_star, dtype=float)
        _check(db.n is None or db.n >= 1, "data.n", "must be at least 1")
        _check(db.seed >= 0, "data.seed", "must be non-negative")
        if db.n_list is not None:
            _check(len(db.n_list) >= 2, "data.n_list", "needs at least two sizes")
            _check(all(b > a for a, b in zip(db.n_list, db.n_list[1:])) and db.n_list[0] >= 1,
                   "data.n_list", "must be strictly increasing positive sizes")
        g = cfg.diagnostics
        _check(0 < g.gamma1 < 0.5, "diagnostics.gamma1", "must lie in (0, 1/2)")
        _check(0 < g.gamma2 < 0.5 - g.gamma1, "diagnostics.gamma2", "must lie in (0, 1/2 - gamma1)")
        _check(g.beta is None or g.beta > 1, "diagnostics.beta", "must exceed 1")
        if cfg.grid is not None:
            _check(cfg.grid.lower < cfg.grid.upper, "grid.upper", "must exceed grid.lower")
            _check(cfg.grid.points_per_dim >= 2, "grid.points_per_dim", "must be at least 2")
            _check(cfg.grid.replicates >= 1, "grid.replicates", "must be at least 1")

    def require_n(self) -> int:
        _check(self.cfg.data.n is not None, "data.n", "is required for this command")
        return self.cfg.data.n

    def require_n_list(self) -> list[int]:
        _check(self.cfg.data.n_list is not None, "data.n_list", "is required for sweep")
        _check(self.cfg.data.seeds_per_n >= 20, "data.seeds_per_n",
               "sweep needs at least 20 seeds per n for medians")
        return list(self.cfg.data.n_list)

    def require_grid(self) -> GridBlock:
        _check(self.cfg.grid is not None, "grid", "block is required for gradient-field")
        return self.cfg.grid


class _field:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, typ, exc, tb):
        if exc is not None and isinstance(exc, InputError) and not isinstance(exc, ConfigError):
            raise ConfigError(f"{self.name}: {exc}") from exc
        return False


def _check(cond: bool, name: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{name}: {message}")


def parse(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as err:
        msgs = []
        for e in err.errors():
            loc = ".".join(str(p) for p in e["loc"]) or "config"
            msgs.append(f"{loc}: {e['msg']}")
        raise ConfigError("; ".join(msgs)) from None


def load(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as err:
        raise ConfigError(f"config: cannot read {path}: {err.strerror}") from None
    except yaml.YAMLError as err:
        raise ConfigError(f"config: not valid YAML: {err}") from None
    return parse(raw)


def dump(cfg: ExperimentConfig) -> dict:
    return cfg.model_dump(mode="json")


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    raw = dump(cfg)
    raw["data"]["seed"] = seed
    raw["cd"]["seeds"] = [seed]
    return parse(raw)


# ---------------------------------------------------------------------------
# presets

_SIGMA0 = [[1.0, 0.5], [0.5, 1.0]]
_STARTS = [[3.0, 3.0], [-3.0, 3.0], [3.0, -3.0], [-3.0, -3.0]]


def _gaussian(n, **over) -> dict:
    raw = {
        "family": {"kind": "gaussian_mean", "Sigma0": _SIGMA0, "stat_bound_C": 6.0},
        "kernel": {"kind": "gaussian_gibbs"},
        "cd": {"eta": 0.1, "m": 3, "steps": 2000, "starts": _STARTS},
        "data": {"theta_star": [0.0, 0.0], "n": n, "seed": 0},
        "grid": {"lower": -4.0, "upper": 4.0, "points_per_dim": 9, "replicates": 5},
    }
    return _merge(raw, over)


def _rbm(n, **over) -> dict:
    raw = {
        "family": {"kind": "binary_rbm", "nv": 2, "nh": 2},
        "kernel": {"kind": "rbm_gibbs"},
        "domain": {"lower": [0.0] * 4, "upper": [1.0] * 4},
        "cd": {"eta": 0.005, "m": 5, "steps": 2000, "starts": [[0.0] * 4]},
        "data": {"theta_star": [0.5] * 4, "n": n, "seed": 0},
        "diagnostics": {"replicates": 1000, "drift_replicates": 10_000},
        "grid": {"lower": 0.0, "upper": 1.0, "points_per_dim": 6, "replicates": 5},
    }
    return _merge(raw, over)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


PRESETS: dict[str, dict] = {
    "gaussian-n50": _gaussian(50),
    "gaussian-n100": _gaussian(100),
    "gaussian-n500": _gaussian(500),
    # exact resampling has alpha = 0, the only Gaussian kernel meeting the drift condition;
    # beta = 2 keeps the four starts outside the ball for the hitting-time check
    "gaussian-exact-n500": _gaussian(500, kernel={"kind": "exact_resample"},
                                     diagnostics={"beta": 2.0}),
    "gaussian-sweep": _gaussian(None, data={"n_list": [50, 100, 500], "seeds_per_n": 20},
                                cd={"starts": [[3.0, 3.0]]}),
    "rbm-n100": _rbm(100),
    "rbm-n10000": _rbm(10_000),
    "rbm-n1000000": _rbm(1_000_000),
    "rbm-sweep": _rbm(None, data={"n_list": [100, 10_000], "seeds_per_n": 20}),
}
LONG_RUNNING = frozenset({"rbm-n1000000"})


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"--preset: unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return parse(PRESETS[name])
