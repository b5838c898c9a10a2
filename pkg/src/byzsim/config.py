"""Experiment plans: TOML files plus command-line overrides, expanded into runs."""
from __future__ import annotations

import itertools
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .simulator import SimulationConfig

# config-file key -> SimulationConfig field, where the names differ
ALIASES = {"nodes": "n_benign"}
SWEEP_KEYS = ("nodes", "connection_ratio", "byzantine_ratio", "rule", "attack")
PLAN_KEYS = {"repetitions": int, "out": str}


def _field_types() -> dict[str, tuple[type, bool]]:
    hints = typing.get_type_hints(SimulationConfig)
    out = {}
    for f in fields(SimulationConfig):
        hint = hints[f.name]
        args = typing.get_args(hint)
        optional = type(None) in args
        base = next((a for a in args if a is not type(None)), hint) if args else hint
        out[f.name] = (base, optional)
    return out


FIELD_TYPES = _field_types()
CONFIG_KEYS = sorted([k for k in FIELD_TYPES if k not in ALIASES.values()]
                     + list(ALIASES) + list(PLAN_KEYS))


def _field(key: str) -> str:
    return ALIASES.get(key, key)


def coerce(key: str, value):
    """Convert ``value`` (TOML scalar or command-line string) to the key's type."""
    if key in PLAN_KEYS:
        typ, optional = PLAN_KEYS[key], False
    elif _field(key) in FIELD_TYPES:
        typ, optional = FIELD_TYPES[_field(key)]
    else:
        raise ConfigError(f"unknown config key {key!r}")
    if isinstance(value, str) and optional and value.lower() in ("none", "null", ""):
        return None
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{key}: value required")
    try:
        if typ is bool:
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "1", "yes", "on"):
                return True
            if isinstance(value, str) and value.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(value)
        if typ is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if typ is float:
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {typ.__name__}, got {value!r}") from None


@dataclass(frozen=True)
class RunSpec:
    run_id: str
    config: SimulationConfig


@dataclass
class ExperimentPlan:
    base: SimulationConfig
    axes: dict[str, list] = field(default_factory=dict)
    repetitions: int = 1
    out: str = "results"

    def runs(self) -> list[RunSpec]:
        keys = [k for k in SWEEP_KEYS if k in self.axes]
        combos = itertools.product(*(self.axes[k] for k in keys))
        specs = []
        for combo in combos:
            for rep in range(self.repetitions):
                changes = {_field(k): v for k, v in zip(keys, combo)}
                changes["seed"] = self.base.seed + rep
                specs.append(RunSpec(f"{len(specs):03d}", replace(self.base, **changes)))
        return specs


def load_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


def build_plan(settings: dict) -> ExperimentPlan:
    """Validate raw key/value settings (later keys already merged) into a plan."""
    scalars, axes = {}, {}
    repetitions, out = 1, "results"
    for key, value in settings.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str) and "," in value and key in SWEEP_KEYS:
            value = [v.strip() for v in value.split(",")]
        if isinstance(value, list):
            if key not in SWEEP_KEYS:
                raise ConfigError(f"{key}: lists are only allowed for {', '.join(SWEEP_KEYS)}")
            if not value:
                raise ConfigError(f"{key}: empty sweep axis")
            axes[key] = [coerce(key, v) for v in value]
            continue
        value = coerce(key, value)
        if key == "repetitions":
            if value < 1:
                raise ConfigError("repetitions must be >= 1")
            repetitions = value
        elif key == "out":
            out = value
        else:
            scalars[_field(key)] = value

    plan = ExperimentPlan(SimulationConfig(**scalars), axes, repetitions, out)
    plan.runs()  # replace() re-validates every point of the sweep
    return plan


def parse_config(path=None, overrides: dict | None = None) -> ExperimentPlan:
    settings = dict(load_file(path)) if path is not None else {}
    settings.update(overrides or {})
    return build_plan(settings)
