"""Experiment configuration: per-experiment defaults, YAML files and flag overrides.

Precedence is flags over file over defaults.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from ..cascade_lti import MODES
from .eu import EXPOSURE_BASES, EuCalibration

EXPERIMENTS = ("exp1", "exp2a", "exp2b", "exp3a", "exp3b", "custom")
ENGINES = ("mc", "lti", "fixed")

# engines each experiment can run
ALLOWED_ENGINES = {
    "exp1": {"mc", "lti"},
    "exp2a": {"mc", "lti"},
    "exp2b": {"mc", "lti"},
    "exp3a": {"mc", "fixed"},
    "exp3b": {"mc", "fixed"},
    "custom": {"mc", "lti"},
}


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


def _grid(a: float, b: float, n: int) -> tuple[float, ...]:
    return tuple(round(float(x), 12) for x in np.linspace(a, b, n))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on; written next to the results.

    ``delta_grid`` and ``sigma_grid`` hold absolute buffer values for exp2a.
    For exp3b ``sigma_grid`` holds the remaining stress-buffer fractions and
    ``delta_factor`` the remaining default-buffer fraction.
    """

    experiment: str
    engines: tuple[str, ...] = ("mc", "lti")
    lambdas: tuple[float, ...] = _grid(0, 1, 13)
    delta_grid: tuple[float, ...] = ()
    sigma_grid: tuple[float, ...] = ()
    z_grid: tuple[float, ...] = ()
    N: int = 5000
    z: float = 10.0
    K: int = 40
    trials: int = 200
    seed: int = 42
    workers: int = 1
    grid_step: float = 0.04 / 64
    M: int = 4096
    mode: str = "wrap"
    tol: float = 1e-8
    max_iter: int = 500
    p0: float = 0.01
    delta_factor: float = 1.0
    eu_seed: int = 3
    eu: dict = field(default_factory=dict)
    model_file: str | None = None
    out: str = "out"

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if not self.engines:
            raise ConfigError("no engines selected")
        bad = [e for e in self.engines if e not in ENGINES]
        if bad:
            raise ConfigError(f"unknown engine(s) {bad}; choose from {', '.join(ENGINES)}")
        wrong = sorted(set(self.engines) - ALLOWED_ENGINES[self.experiment])
        if wrong:
            raise ConfigError(f"{self.experiment} cannot run engine(s) {wrong}")
        if not self.lambdas or any(not 0 <= x <= 1 for x in self.lambdas):
            raise ConfigError("lambdas must be a non-empty list of values in [0, 1]")
        if self.experiment == "exp2a" and not (self.delta_grid or self.sigma_grid):
            raise ConfigError("exp2a needs a delta_grid or a sigma_grid")
        if self.experiment == "exp2b" and not self.z_grid:
            raise ConfigError("exp2b needs a z_grid")
        if self.experiment == "exp3b" and not self.sigma_grid:
            raise ConfigError("exp3b needs a sigma_grid of stress-buffer fractions")
        if self.experiment == "custom" and not self.model_file:
            raise ConfigError("custom needs model_file")
        if any(x < 0 for x in self.delta_grid + self.sigma_grid) or any(x <= 0 for x in self.z_grid):
            raise ConfigError("buffer grids must be >= 0 and z values > 0")
        if self.trials < 0 or ("mc" in self.engines and self.trials == 0):
            raise ConfigError("mc needs trials >= 1 (drop mc from engines for a purely analytic run)")
        if self.N < 1 or self.K < 1 or self.workers < 1 or self.max_iter < 1:
            raise ConfigError("N, K, workers and max_iter must be positive")
        if not (self.grid_step > 0 and math.isfinite(self.grid_step)):
            raise ConfigError("grid_step must be positive")
        if self.M < 2 or self.M & (self.M - 1):
            raise ConfigError("M must be a power of two")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if not 0 <= self.p0 <= 1 or not 0 < self.delta_factor:
            raise ConfigError("need 0 <= p0 <= 1 and delta_factor > 0")
        self.calibration()
        return self

    def calibration(self) -> EuCalibration:
        known = {f.name for f in fields(EuCalibration)}
        unknown = sorted(set(self.eu) - known)
        if unknown:
            raise ConfigError(f"unknown eu calibration key(s) {unknown}")
        if self.eu.get("exposure_basis", "edge") not in EXPOSURE_BASES:
            raise ConfigError(f"eu.exposure_basis must be one of {EXPOSURE_BASES}")
        try:
            return EuCalibration(**self.eu)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad eu calibration: {exc}") from None

    def effective(self) -> dict:
        """Full configuration including defaulted values, as plain data."""
        d = asdict(self)
        d["eu"] = self.calibration().as_dict() if self.experiment in ("exp3a", "exp3b") else dict(self.eu)
        return d


# Desk-scale defaults per experiment.  Exp-3 grids are in currency units.
DEFAULTS: dict[str, dict] = {
    "exp1": dict(engines=("mc", "lti"), lambdas=_grid(0, 1, 13)),
    "exp2a": dict(
        engines=("mc", "lti"),
        lambdas=(0.5,),
        delta_grid=_grid(0.035, 0.05, 7),
        sigma_grid=_grid(0.0, 0.05, 11),
    ),
    "exp2b": dict(
        engines=("lti",),
        lambdas=_grid(0, 1, 5),
        z_grid=tuple(float(z) for z in range(2, 15)),
        grid_step=0.005,
        M=2048,
        mode="cap",
        trials=50,
    ),
    "exp3a": dict(
        engines=("mc", "fixed"),
        lambdas=_grid(0, 1, 11),
        trials=500,
        grid_step=500.0,
        M=2048,
        mode="cap",
        p0=1.0 / 90,
    ),
    "exp3b": dict(
        engines=("mc", "fixed"),
        lambdas=(0.7,),
        sigma_grid=_grid(0, 1, 21),
        delta_factor=0.1,
        trials=500,
        grid_step=100.0,
        M=2048,
        mode="cap",
        p0=1.0 / 90,
    ),
    "custom": dict(engines=("lti",), trials=0),
}

_TUPLE_FIELDS = {"engines", "lambdas", "delta_grid", "sigma_grid", "z_grid"}
_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, value):
    if value is None:
        return None
    if key in _TUPLE_FIELDS:
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        if not isinstance(value, (list, tuple)):
            value = [value]
        if key == "engines":
            return tuple(str(v).strip() for v in value)
        return tuple(float(v) for v in value)
    if key == "eu":
        if not isinstance(value, dict):
            raise ConfigError("eu must be a mapping")
        return dict(value)
    kind = _TYPES[key]
    if kind == "int":
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{key} must be an integer")
        return int(value)
    if kind == "float":
        return float(value)
    return str(value)


def load_file(path) -> dict:
    """Config mapping from a YAML file."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"bad YAML in {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def build_config(experiment: str | None = None, file_values: dict | None = None, flag_values: dict | None = None) -> ExperimentConfig:
    """Merge defaults, file values and flags (in increasing priority) and validate."""
    file_values = dict(file_values or {})
    flag_values = {k: v for k, v in (flag_values or {}).items() if v is not None}
    exp = flag_values.get("experiment") or file_values.get("experiment") or experiment
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}; choose from {', '.join(EXPERIMENTS)}")
    merged: dict = {"experiment": exp, **DEFAULTS[exp]}
    for source in (file_values, flag_values):
        for k, v in source.items():
            if k not in _TYPES:
                raise ConfigError(f"unknown config key {k!r}")
            try:
                v = _coerce(k, v)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {k}: {exc}") from None
            if k == "eu":
                v = {**merged.get("eu", {}), **v}
            merged[k] = v
    try:
        return ExperimentConfig(**merged).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def with_out(cfg: ExperimentConfig, out) -> ExperimentConfig:
    return replace(cfg, out=str(Path(out)))
