"""Experiment configuration: strict TOML parsing, environment overrides and
desk/paper presets.

A config file holds top-level keys (``seed``, ``scale``, ``output_dir``,
``workers``) and one table per experiment block.  Any key may be overridden
from the environment as ``IMAGINATION_<KEY>`` or
``IMAGINATION_<BLOCK>__<KEY>``; values are parsed as Python literals.
"""

from __future__ import annotations

import ast
import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from ..allocation import LqgAllocationConfig
from ..scaling import ScalingConfig

ENV_PREFIX = "IMAGINATION_"
EXPERIMENTS = ("calibrate", "scale", "allocate", "reinforce", "fidelity", "accept")
SCALES = ("desk", "paper")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class CalibrateConfig:
    n_synthetic: int = 200
    n_lqg: int = 200
    n_initial_states: int = 8
    eps_range: tuple[float, float] = (1e-3, 1e-1)
    synthetic_gamma_range: tuple[float, float] = (0.5, 0.95)
    synthetic_lip_r_range: tuple[float, float] = (0.1, 2.0)
    synthetic_state_dims: tuple[int, ...] = (2, 3, 4, 6)
    synthetic_action_dims: tuple[int, ...] = (1, 2, 3)
    lqg_state_dim: int = 4
    lqg_action_dim: int = 2
    lqg_gamma: float = 0.8
    lqg_domain_radius: float = 1.0
    s0_radius: float = 1.0
    tol: float = 1e-9
    ecdf_points: int = 200

    @classmethod
    def paper(cls, **kw) -> "CalibrateConfig":
        return cls(**{"n_synthetic": 150, "n_lqg": 375, **kw})


@dataclass(frozen=True)
class AllocateConfig:
    n_lqg: int = 30
    lqg: LqgAllocationConfig = field(default_factory=LqgAllocationConfig)
    n_oracle_problems: int = 100
    oracle_grid: int = 2001
    linear_lip_f: tuple[float, ...] = (0.3, 0.5, 0.7)
    linear_lip_pi: tuple[float, ...] = (0.0, 0.2)
    linear_cost_ratio: tuple[float, ...] = (0.1, 1.0, 10.0)
    linear_gamma: float = 0.9

    @classmethod
    def paper(cls, **kw) -> "AllocateConfig":
        return cls(**kw)


@dataclass(frozen=True)
class ReinforceConfig:
    horizon: int = 10
    gamma: float = 0.9
    K_grid: tuple[int, ...] = (2, 8, 32)
    sigma2_grid: tuple[float, ...] = (0.1, 1.0, 4.0)
    gamma_grid: tuple[float, ...] = (0.5, 0.9)
    horizon_grid: tuple[int, ...] = (1, 10)
    reps: int = 2_000
    unbiased_reps: int = 10_000
    unbiased_K_grid: tuple[int, ...] = (1, 4, 16)
    bias_K_grid: tuple[int, ...] = (8, 32, 128)
    bias_reps: int = 2_000
    reference_rollouts: int = 100_000
    bootstrap_resamples: int = 1_000
    env_seed: int = 0
    state_dim: int = 3
    action_dim: int = 2
    noise: str = "gaussian"

    @classmethod
    def paper(cls, **kw) -> "ReinforceConfig":
        return cls(**kw)


@dataclass(frozen=True)
class FidelityConfig:
    regime: str = "all"
    a: float = 1.0
    p: float = 2.0
    sigma0: float = 1.0
    cmax: float = 2.0
    sigma_floor: float = 0.5
    c_lo: float = 0.1
    c_hi: float = 10.0
    points: int = 201

    @classmethod
    def paper(cls, **kw) -> "FidelityConfig":
        return cls(**kw)


BLOCKS: dict[str, type] = {
    "calibrate": CalibrateConfig,
    "scaling": ScalingConfig,
    "allocate": AllocateConfig,
    "reinforce": ReinforceConfig,
    "fidelity": FidelityConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "accept"
    seed: int = 0
    scale: str = "desk"
    output_dir: str = "runs"
    workers: int = 1
    calibrate: CalibrateConfig = field(default_factory=CalibrateConfig)
    scaling: ScalingConfig = field(default_factory=ScalingConfig)
    allocate: AllocateConfig = field(default_factory=AllocateConfig)
    reinforce: ReinforceConfig = field(default_factory=ReinforceConfig)
    fidelity: FidelityConfig = field(default_factory=FidelityConfig)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: unknown value {self.experiment!r}")
        if self.scale not in SCALES:
            raise ConfigError(f"scale: unknown value {self.scale!r}")
        if self.seed < 0:
            raise ConfigError("seed: must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers: must be at least 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value: Any, default: Any, key: str) -> Any:
    """Convert a parsed value to the type of ``default``."""
    if dataclasses.is_dataclass(default):
        if not isinstance(value, Mapping):
            raise ConfigError(f"{key}: expected a table")
        return _build(type(default), value, key, base=default)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list")
        proto = default[0] if default else value[0] if value else 0.0
        return tuple(_coerce(v, proto, f"{key}[{i}]") for i, v in enumerate(value))
    return value


def _build(cls: type, data: Mapping, prefix: str, base=None):
    base = base if base is not None else cls()
    known = {f.name for f in fields(cls)}
    # environment names arrive lowercased; map them back to mixed-case fields
    folded = {k.lower(): k for k in known}
    data = {k if k in known else folded.get(k.lower(), k): v for k, v in data.items()}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{prefix + '.' if prefix else ''}{unknown[0]}: unknown key")
    updates = {k: _coerce(v, getattr(base, k), f"{prefix + '.' if prefix else ''}{k}") for k, v in data.items()}
    try:
        return dataclasses.replace(base, **updates)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from exc


def _parse_env_value(text: str) -> Any:
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def env_overrides(environ: Mapping[str, str]) -> dict:
    """Nested override tree from ``IMAGINATION_*`` variables."""
    tree: dict = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in name[len(ENV_PREFIX):].split("__")]
        node = tree
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = _parse_env_value(raw)
    return tree


def _merge(a: dict, b: Mapping) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = _merge(out.get(k, {}), v) if isinstance(v, Mapping) and isinstance(out.get(k), Mapping) else v
    return out


def preset(scale: str) -> ExperimentConfig:
    if scale not in SCALES:
        raise ConfigError(f"scale: unknown value {scale!r}")
    if scale == "desk":
        return ExperimentConfig(scale="desk")
    return ExperimentConfig(
        scale="paper",
        calibrate=CalibrateConfig.paper(),
        scaling=ScalingConfig.paper(),
        allocate=AllocateConfig.paper(),
        reinforce=ReinforceConfig.paper(),
        fidelity=FidelityConfig.paper(),
    )


def load_config(
    path: Optional[str | Path] = None,
    overrides: Optional[Mapping] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> ExperimentConfig:
    """Resolve a config: preset for the chosen scale, then file, then
    environment, then explicit ``overrides`` (typically CLI flags)."""
    tree: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                tree = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config: invalid TOML in {path}: {exc}") from exc
    tree = _merge(tree, env_overrides(os.environ if environ is None else environ))
    tree = _merge(tree, overrides or {})
    scale = tree.get("scale", "desk")
    if not isinstance(scale, str):
        raise ConfigError("scale: expected a string")
    return _build(ExperimentConfig, tree, "", base=preset(scale))
