"""Experiment configuration.

A config file is flat ``key = value`` text; ``#`` starts a comment, and lists
are comma separated. Every key names a field of one of the parameter
dataclasses (channel, social, relay, mobility, simulation) or one of the
run-level keys below. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .channel import ChannelParams
from .mobility import MobilityParams
from .relaygraph import RelayParams
from .sim import SimSettings
from .social import SocialParams

SEED_ENV = "D2D_SIM_SEED"

_GROUPS = {
    "channel": ChannelParams,
    "social": SocialParams,
    "relay": RelayParams,
    "mobility": MobilityParams,
}
_SIM_KEYS = [f.name for f in dataclasses.fields(SimSettings) if f.name not in _GROUPS]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    seed: int = 0
    n_seeds: int = 20
    jobs: int = 0  # 0: one worker per core
    output_dir: str = "results"
    sim: SimSettings = field(default_factory=SimSettings)

    @property
    def seeds(self) -> list[int]:
        return list(range(self.seed, self.seed + self.n_seeds))

    def as_flat(self) -> dict:
        out = {"seed": self.seed, "n_seeds": self.n_seeds, "jobs": self.jobs, "output_dir": self.output_dir}
        for k in _SIM_KEYS:
            out[k] = getattr(self.sim, k)
        for g in _GROUPS:
            for k, v in dataclasses.asdict(getattr(self.sim, g)).items():
                out[k] = v
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}

    def config_hash(self) -> str:
        """Short digest of every resolved setting except where output goes."""
        flat = {k: v for k, v in self.as_flat().items() if k not in ("output_dir", "jobs")}
        blob = json.dumps(flat, sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **overrides) -> "ExperimentConfig":
        return from_mapping({**self.as_flat(), **overrides})


def known_keys() -> list[str]:
    keys = ["seed", "n_seeds", "jobs", "output_dir"] + list(_SIM_KEYS)
    for cls in _GROUPS.values():
        keys += [f.name for f in dataclasses.fields(cls)]
    return keys


def _field_types() -> dict:
    types = {"seed": int, "n_seeds": int, "jobs": int, "output_dir": str}
    for cls in [SimSettings, *_GROUPS.values()]:
        hints = typing.get_type_hints(cls)
        for f in dataclasses.fields(cls):
            if f.name not in _GROUPS:
                types[f.name] = hints[f.name]
    return types


def _coerce(key: str, value, tp):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value is None or (isinstance(value, str) and value.strip().lower() in ("none", "")):
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(key, value, inner[0])
    if origin is tuple:
        items = value if isinstance(value, (list, tuple)) else [v for v in str(value).split(",") if v.strip()]
        elem = args[0] if args else str
        return tuple(_coerce(key, v, elem) for v in items)
    try:
        if tp is bool:
            if isinstance(value, bool):
                return value
            s = str(value).strip().lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if tp is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(str(value).strip()) if isinstance(value, str) else int(value)
        if tp is float:
            return float(str(value).strip()) if isinstance(value, str) else float(value)
        if tp is str:
            return str(value).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot read {value!r} as {tp.__name__}") from None
    return value


def from_mapping(values: dict) -> ExperimentConfig:
    types = _field_types()
    unknown = sorted(set(values) - set(types))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    vals = {k: _coerce(k, v, types[k]) for k, v in values.items()}
    try:
        groups = {}
        for g, cls in _GROUPS.items():
            names = {f.name for f in dataclasses.fields(cls)}
            groups[g] = cls(**{k: v for k, v in vals.items() if k in names})
        sim = SimSettings(**{k: v for k, v in vals.items() if k in _SIM_KEYS}, **groups)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    cfg = ExperimentConfig(vals.get("seed", 0), vals.get("n_seeds", 20), vals.get("jobs", 0),
                           vals.get("output_dir", "results"), sim)
    if cfg.n_seeds < 1:
        raise ConfigError("n_seeds must be >= 1")
    if cfg.jobs < 0:
        raise ConfigError("jobs must be >= 0")
    return cfg


def parse_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path: str | Path | None = None, json_path: str | Path | None = None,
                overrides: dict | None = None, env: dict | None = None) -> ExperimentConfig:
    """Resolve a config from an optional file, explicit overrides and the seed env var."""
    values: dict = {}
    if path is not None and json_path is not None:
        raise ConfigError("give either a key=value config or a JSON config, not both")
    if path is not None:
        values.update(parse_text(Path(path).read_text(encoding="utf-8")))
    if json_path is not None:
        try:
            data = json.loads(Path(json_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON config: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("JSON config must be an object")
        values.update(data)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        values["seed"] = env[SEED_ENV]
    return from_mapping(values)
