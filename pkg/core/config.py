# core/config.py
"""
Solver settings. Every numeric choice the estimator makes lives in one of
the models below; the CLI merges flags, a key=value file and the
environment into them.
"""
import logging
import math
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from core.errors import ConfigError

logger = logging.getLogger(__name__)

CONFIG_ENV = "DUOFLOW_CONFIG"


class Mode(str, Enum):
    STATIC = "static"    # single flow U, L2' == L2, V == 0
    DYNAMIC = "dynamic"  # two flows


class InitPolicy(str, Enum):
    ZERO_FOREGROUND = "zero_foreground"
    SUPPLIED_LAYERS = "supplied_layers"
    SUPPLIED_FLOWS = "supplied_flows"


class Weights(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lambda_l: float = Field(1.0, ge=0.0)
    lambda_f: float = Field(0.1, ge=0.0)
    tgv_order: int = Field(1, ge=1, le=2)
    # (alpha1, alpha0): first-order and symmetrised-gradient weights
    tgv_alpha: Tuple[float, float] = (1.0, 2.0)

    @field_validator("tgv_alpha")
    @classmethod
    def _positive_alpha(cls, value):
        if value[0] <= 0 or value[1] <= 0:
            raise ValueError("tgv_alpha entries must be positive")
        return value


class IrlsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epsilon: float = Field(1e-4, gt=0.0)
    max_outer: int = Field(40, ge=1)
    stop_tol: float = Field(1e-6, ge=0.0)
    cg_tol: float = Field(1e-6, gt=0.0)
    cg_maxiter: int = Field(400, ge=1)
    active_set_passes: int = Field(3, ge=1)
    max_backtracks: int = Field(20, ge=0)


class RelaxConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # data step uses theta; the smoothing step weight is theta * lambda_f
    theta: float = Field(2.5, gt=0.0)
    warps_per_level: int = Field(5, ge=1)
    relax_iters: int = Field(5, ge=1)
    pd_iters: int = Field(50, ge=1)
    # duality gap per pixel and component that ends a smoothing step early; 0 runs pd_iters
    pd_tol: float = Field(1e-4, ge=0.0)
    tau: float = Field(1.0 / math.sqrt(8.0), gt=0.0)
    sigma: float = Field(1.0 / math.sqrt(8.0), gt=0.0)
    scale_factor: float = Field(0.5, ge=0.5, le=0.95)
    min_size: int = Field(16, ge=8)
    median_filter: bool = True
    gradient_blur: float = Field(0.5, ge=0.0)
    parallel_layers: bool = True

    @model_validator(mode="after")
    def _step_sizes(self):
        # ||grad||^2 <= 8 for forward differences on a 2-D grid
        if self.tau * self.sigma * 8.0 > 1.0 + 1e-12:
            raise ValueError(f"tau*sigma*8 = {self.tau * self.sigma * 8.0:.4f} exceeds 1")
        return self


class SolverConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    weights: Weights = Field(default_factory=Weights)
    c: float = Field(0.25, gt=0.0, le=1.0)
    outer_iters: int = Field(25, ge=1)
    irls: IrlsConfig = Field(default_factory=IrlsConfig)
    relax: RelaxConfig = Field(default_factory=RelaxConfig)
    init: InitPolicy = InitPolicy.ZERO_FOREGROUND
    stop_tol: float = Field(0.0, ge=0.0)
    # relative slack before a half-step counts as an energy increase
    accept_tol: float = Field(1e-6, ge=0.0)


class RunSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    mode: Mode = Mode.STATIC
    solver: SolverConfig = Field(default_factory=SolverConfig)


# ==========================================
# FLAT KEY -> MODEL PATH
# ==========================================
# Keys use the CLI flag spelling; dashes and underscores are interchangeable.

_KEY_PATHS: Dict[str, Tuple[str, ...]] = {
    "mode": ("mode",),
    "c": ("solver", "c"),
    "outer": ("solver", "outer_iters"),
    "stop_tol": ("solver", "stop_tol"),
    "accept_tol": ("solver", "accept_tol"),
    "init": ("solver", "init"),
    "lambda_l": ("solver", "weights", "lambda_l"),
    "lambda_f": ("solver", "weights", "lambda_f"),
    "reg": ("solver", "weights", "tgv_order"),
    "tgv_alpha": ("solver", "weights", "tgv_alpha"),
    "irls_epsilon": ("solver", "irls", "epsilon"),
    "irls_max_outer": ("solver", "irls", "max_outer"),
    "irls_tol": ("solver", "irls", "stop_tol"),
    "cg_tol": ("solver", "irls", "cg_tol"),
    "cg_maxiter": ("solver", "irls", "cg_maxiter"),
    "theta": ("solver", "relax", "theta"),
    "warps": ("solver", "relax", "warps_per_level"),
    "relax_iters": ("solver", "relax", "relax_iters"),
    "pd_iters": ("solver", "relax", "pd_iters"),
    "pd_tol": ("solver", "relax", "pd_tol"),
    "tau": ("solver", "relax", "tau"),
    "sigma": ("solver", "relax", "sigma"),
    "scale_factor": ("solver", "relax", "scale_factor"),
    "min_size": ("solver", "relax", "min_size"),
    "median_filter": ("solver", "relax", "median_filter"),
    "gradient_blur": ("solver", "relax", "gradient_blur"),
    "parallel_layers": ("solver", "relax", "parallel_layers"),
}

_REGULARIZERS = {"tv": 1, "tgv2": 2}


def known_keys():
    return sorted(_KEY_PATHS)


def _normalise_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def _convert(key: str, value: Any) -> Any:
    if key == "reg" and isinstance(value, str):
        name = value.strip().lower()
        if name not in _REGULARIZERS:
            raise ConfigError(f"reg must be one of {sorted(_REGULARIZERS)}, got {value!r}")
        return _REGULARIZERS[name]
    if key == "tgv_alpha" and isinstance(value, str):
        parts = [p for p in value.replace(",", " ").split() if p]
        if len(parts) != 2:
            raise ConfigError(f"tgv_alpha needs two numbers, got {value!r}")
        return tuple(parts)
    return value


def read_config_file(path) -> Dict[str, str]:
    """Parse key=value lines. '#' starts a comment; blank lines are skipped."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc

    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = _normalise_key(key)
        if key not in _KEY_PATHS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def resolve_settings(flags: Optional[Mapping[str, Any]] = None, config_path=None) -> RunSettings:
    """Merge flags > config file > $DUOFLOW_CONFIG file > model defaults, key by key."""
    merged: Dict[str, Any] = {}

    for source in (os.getenv(CONFIG_ENV), config_path):
        if source:
            logger.debug("[CONFIG] reading %s", source)
            merged.update(read_config_file(source))

    for key, value in (flags or {}).items():
        key = _normalise_key(key)
        if value is None:
            continue
        if key not in _KEY_PATHS:
            raise ConfigError(f"unknown setting {key!r}")
        merged[key] = value

    nested: Dict[str, Any] = {}
    for key, value in merged.items():
        node = nested
        path = _KEY_PATHS[key]
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = _convert(key, value)

    try:
        return RunSettings.model_validate(nested)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
