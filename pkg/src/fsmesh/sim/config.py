"""Experiment description and its INI file format.

Example::

    [network]
    users = 100
    density = 1.0
    radius = 10.0
    bandwidth = 1400000

    [movement]
    model = static

    [run]
    duration = 3600
    seed = 1
    runs = 8

Unknown sections or keys are rejected so typos do not pass silently.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Union


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StaticMovement:
    pass


@dataclass(frozen=True)
class ConvergingMovement:
    groups: int = 5
    speed: float = 1.4  # m/s
    dwell: float = 3600.0  # s at the gathering point, centred in the run
    spawn_radius: float = 200.0  # m from the gathering point


@dataclass(frozen=True)
class TraceMovement:
    path: str = ""


Movement = Union[StaticMovement, ConvergingMovement, TraceMovement]


@dataclass(frozen=True)
class SimConfig:
    users: int = 625
    density: float = 1.0  # users per m^2
    radius: float = 10.0  # m
    bandwidth: float = 1.4e6  # bit/s
    epoch: float = 60.0  # s
    rollover: bool = True
    msg_interval: float = 30.0  # s between sends per user
    msg_size: int = 512
    depth: int = 20
    crypto: str = "mock"  # "mock" or "real"
    heartbeat: float = 5.0
    announce_delay: float = 0.01
    sync_period: float = 30.0
    epsilon_ms: float = 100.0
    clock_offset: float = 300.0  # initial offsets uniform in +-clock_offset s
    drift: float = 1.0  # max |drift| in ms per minute
    attackers: int = 0
    attack_range: float = 3600.0  # fabricated times within +-attack_range s
    movement: Movement = field(default_factory=StaticMovement)
    mobility_step: float = 1.0
    duration: float = 5 * 3600.0
    stabilization: float = 300.0
    sample_interval: float = 10.0
    seed: int = 0
    runs: int = 16
    messages: bool = True

    def validate(self) -> "SimConfig":
        if self.users < 2:
            raise ConfigError("need at least two users")
        if not 0 <= self.attackers < self.users - 1:
            raise ConfigError(f"attackers ({self.attackers}) must leave at least two honest users")
        for name in ("density", "radius", "bandwidth", "epoch", "msg_interval", "sync_period",
                     "heartbeat", "duration", "sample_interval", "mobility_step"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("epsilon_ms", "clock_offset", "drift", "attack_range", "stabilization",
                     "announce_delay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.msg_size <= 0:
            raise ConfigError("msg_size must be positive")
        if self.crypto not in ("mock", "real"):
            raise ConfigError(f"crypto must be 'mock' or 'real', not {self.crypto!r}")
        if not 1 <= self.depth <= 32:
            raise ConfigError("depth must be in 1..32")
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if self.stabilization >= self.duration:
            raise ConfigError("stabilization must end before the run does")
        if isinstance(self.movement, ConvergingMovement):
            m = self.movement
            if m.groups < 1 or m.groups > self.users:
                raise ConfigError("converging groups must be in 1..users")
            if m.speed <= 0 or m.dwell < 0 or m.spawn_radius < 0:
                raise ConfigError("converging speed must be positive, dwell and spawn_radius non-negative")
        if isinstance(self.movement, TraceMovement) and not self.movement.path:
            raise ConfigError("trace movement needs a path")
        needed = self.reference_start + self.duration + self.clock_offset + self.attack_range
        epochs_needed = math.ceil(needed / self.ratchet_period) + 2
        if 2 ** (self.depth + 1) - 2 < epochs_needed:
            raise ConfigError(f"depth {self.depth} cannot cover {epochs_needed} epochs")
        return self

    @property
    def ratchet_period(self) -> float:
        return self.epoch / 2 if self.rollover else self.epoch

    @property
    def reference_start(self) -> float:
        """True clock reading (s after genesis) when the simulation starts."""
        return self.clock_offset + self.attack_range + self.epoch

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, seed=seed)


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> {ini key: parser}
_SCHEMA = {
    "network": {"users": int, "density": float, "radius": float, "bandwidth": float},
    "protocol": {"epoch": float, "rollover": _bool, "msg_interval": float, "msg_size": int,
                 "depth": int, "crypto": str, "heartbeat": float, "announce_delay": float,
                 "messages": _bool},
    "sync": {"period": float, "epsilon_ms": float, "clock_offset": float, "drift": float},
    "attack": {"attackers": int, "range": float},
    "movement": {"model": str, "groups": int, "speed": float, "dwell": float,
                 "spawn_radius": float, "trace": str, "step": float},
    "run": {"duration": float, "stabilization": float, "sample_interval": float, "seed": int,
            "runs": int},
}
_RENAMES = {("sync", "period"): "sync_period", ("attack", "range"): "attack_range",
            ("movement", "step"): "mobility_step"}


def parse_config(text: str, base_dir: Optional[Path] = None) -> SimConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    values: dict = {}
    movement: dict = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                value = _SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
            if section == "movement" and key != "step":
                movement[key] = value
            else:
                values[_RENAMES.get((section, key), key)] = value
    model = movement.pop("model", "static").lower()
    if model == "static":
        if movement:
            raise ConfigError(f"static movement takes no options: {sorted(movement)}")
        values["movement"] = StaticMovement()
    elif model == "converging":
        if "trace" in movement:
            raise ConfigError("converging movement takes no trace file")
        values["movement"] = ConvergingMovement(**movement)
    elif model == "trace":
        path = movement.pop("trace", "")
        if movement:
            raise ConfigError(f"trace movement takes only a trace file, got {sorted(movement)}")
        if path and base_dir is not None and not Path(path).is_absolute():
            path = str(base_dir / path)
        values["movement"] = TraceMovement(path)
    else:
        raise ConfigError(f"unknown movement model {model!r}")
    return SimConfig(**values).validate()


def load_config(path) -> SimConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent)


def dump_config(config: SimConfig) -> str:
    """Render ``config`` in the INI format accepted by :func:`parse_config`."""
    lines = []
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            if section == "movement" and key != "step":
                continue
            name = _RENAMES.get((section, key), key)
            value = getattr(config, name)
            lines.append(f"{key} = {str(value).lower() if isinstance(value, bool) else value}")
        if section == "movement":
            m = config.movement
            if isinstance(m, StaticMovement):
                lines.append("model = static")
            elif isinstance(m, ConvergingMovement):
                lines.append("model = converging")
                lines.extend(f"{f.name} = {getattr(m, f.name)}" for f in fields(m))
            else:
                lines.append("model = trace")
                lines.append(f"trace = {m.path}")
        lines.append("")
    return "\n".join(lines)
