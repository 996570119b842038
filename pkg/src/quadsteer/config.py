"""Experiment configuration: strict JSON schema, named presets, dotted overrides."""

from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass, fields

from .bounds import EnvelopeSpec
from .dyncontrol import PIGains
from .kincontrol import KinGains
from .model import RobotParams
from .sim import SimConfig, TrajectorySpec
from .uncertainty import Pulse, UncertaintyModel

GRAVITY = 9.81
WALL_THRUST_FRACTION = 0.999
FLOOR_VISCOUS = 0.0305


class ConfigError(ValueError):
    """Schema or parse error; the CLI maps it to exit code 2."""


@dataclass(frozen=True)
class CertifyOptions:
    epsilon: float = 1e-3
    use_b_c: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")


@dataclass(frozen=True)
class AnalysisOptions:
    t_start: float = 5.0


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    robot: RobotParams
    envelope: EnvelopeSpec
    kin_gains: KinGains
    pi_gains: PIGains
    trajectory: TrajectorySpec
    disturbance: UncertaintyModel
    sim: SimConfig
    certify: CertifyOptions
    analysis: AnalysisOptions
    seeds: tuple
    raw: dict


SECTIONS = {
    "robot": RobotParams,
    "envelope": EnvelopeSpec,
    "kin_gains": KinGains,
    "pi_gains": PIGains,
    "trajectory": TrajectorySpec,
    "sim": SimConfig,
    "certify": CertifyOptions,
    "analysis": AnalysisOptions,
}
TOP_KEYS = set(SECTIONS) | {"name", "disturbance", "seeds"}


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**{k: _tuplify(v) for k, v in data.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _disturbance(data, where: str = "disturbance") -> UncertaintyModel:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    data = dict(data)
    parts = data.pop("parts", [])
    pulses = data.pop("pulses", [])
    if not isinstance(parts, list) or not isinstance(pulses, list):
        raise ConfigError(f"{where}: parts and pulses must be lists")
    names = {f.name for f in fields(UncertaintyModel)} - {"parts", "pulses"}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        built_pulses = tuple(_build(Pulse, pl, f"{where}.pulses[{i}]") for i, pl in enumerate(pulses))
        built_parts = tuple(_disturbance(pt, f"{where}.parts[{i}]") for i, pt in enumerate(parts))
        return UncertaintyModel(
            parts=built_parts, pulses=built_pulses, **{k: _tuplify(v) for k, v in data.items()}
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(data: dict) -> ExperimentConfig:
    """Validate and build a configuration; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigError("config: expected a JSON object")
    unknown = sorted(set(data) - TOP_KEYS)
    if unknown:
        raise ConfigError(f"config: unknown key(s) {', '.join(unknown)}")
    built = {name: _build(cls, data.get(name, {}), name) for name, cls in SECTIONS.items()}
    robot = built["robot"]
    if "envelope" not in data or "a" not in data["envelope"]:
        env_data = dict(data.get("envelope", {}), a=robot.a)
        built["envelope"] = _build(EnvelopeSpec, env_data, "envelope")
    dist_data = data.get("disturbance", {"kind": "none"})
    if not isinstance(dist_data, dict):
        raise ConfigError("disturbance: expected an object")
    dist = _disturbance(_fill_radius(dist_data, robot.r))
    seeds = data.get("seeds", [0])
    if not isinstance(seeds, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError("seeds: expected a list of integers")
    return ExperimentConfig(
        name=str(data.get("name", "custom")),
        disturbance=dist,
        seeds=tuple(seeds),
        raw=copy.deepcopy(data),
        **built,
    )


def _fill_radius(data: dict, r: float) -> dict:
    """Default the wheel radius of weighted-metric models to the robot's."""
    data = dict(data)
    if data.get("metric") == "weighted" and "radius" not in data:
        data["radius"] = r
    if "parts" in data and isinstance(data["parts"], list):
        data["parts"] = [_fill_radius(p, r) if isinstance(p, dict) else p for p in data["parts"]]
    return data


def load(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return from_dict(data)


# -- presets ------------------------------------------------------------------------


def floor_disturbance() -> dict:
    return {"kind": "viscous", "metric": "weighted", "b_f": FLOOR_VISCOUS}


def wall_disturbance(mass: float = 3.5) -> dict:
    """Gravity in -y, thruster lift cancelling 99.9 % of it, and rolling drag."""
    weight = mass * GRAVITY
    return {
        "kind": "composite",
        "parts": [
            floor_disturbance(),
            {"kind": "gravity_plane", "g": GRAVITY, "mass": mass, "direction": -math.pi / 2},
            {"kind": "constant_bias", "c_bias": [0.0, WALL_THRUST_FRACTION * weight, 0.0, 0.0, 0.0, 0.0]},
        ],
    }


def _base(name: str, kind: str, T: float, disturbance: dict) -> dict:
    return {
        "name": name,
        "robot": {},
        "envelope": {"delta_range": [-math.pi / 2, math.pi / 2], "delta_dot_max": math.pi / 2, "v_w_max": 0.13, "A_d": 0.5},
        "kin_gains": {"k_x": 5.0, "k_y": 5.0, "k_theta": 5.0, "k_delta": 5.0},
        "pi_gains": {"Kp": [1.563, 2.344, 2.344], "Ki": [0.061, 0.092, 0.092], "K_t": 1.923},
        "trajectory": {"kind": kind},
        "disturbance": disturbance,
        "sim": {"dt": 1e-3, "T": T, "integrator": "rk4", "record_stride": 1},
        "certify": {"epsilon": 1e-3},
        "seeds": [0],
    }


PRESETS = {
    "table1-floor-flower": lambda: _base("table1-floor-flower", "flower", 70.0, floor_disturbance()),
    "table1-wall-lissajous": lambda: _base("table1-wall-lissajous", "lissajous", 2 * math.pi / 0.1, wall_disturbance()),
}


def preset_dict(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    return PRESETS[name]()


def preset(name: str) -> ExperimentConfig:
    return from_dict(preset_dict(name))


# -- dotted overrides ----------------------------------------------------------------

_TOKEN = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)((?:\[\d+\])*)")


def _split_path(path: str) -> list:
    keys: list = []
    for part in path.split("."):
        if part.isdigit():
            keys.append(int(part))
            continue
        m = _TOKEN.fullmatch(part)
        if not m:
            raise ConfigError(f"bad parameter path {path!r}")
        keys.append(m.group(1))
        keys.extend(int(i) for i in re.findall(r"\[(\d+)\]", m.group(2)))
    return keys


def set_path(data: dict, path: str, value) -> dict:
    """Copy of ``data`` with ``path`` (e.g. ``pi_gains.Kp[0]`` or ``sim.dt``) set."""
    out = copy.deepcopy(data)
    keys = _split_path(path)
    if keys and keys[0] not in TOP_KEYS:
        raise ConfigError(f"unknown parameter section {keys[0]!r}")
    node = out
    for i, key in enumerate(keys[:-1]):
        nxt = keys[i + 1]
        if isinstance(key, int):
            if not isinstance(node, list) or key >= len(node):
                raise ConfigError(f"index {key} out of range in {path!r}")
            node = node[key]
            continue
        if key not in node:
            node[key] = _default_container(keys[0], key, nxt)
        node = node[key]
    last = keys[-1]
    if isinstance(last, int):
        if not isinstance(node, list) or last >= len(node):
            raise ConfigError(f"index {last} out of range in {path!r}")
        node[last] = value
    else:
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {path!r}")
        node[last] = value
    return out


def _default_container(section: str, key: str, nxt):
    """Materialize a defaulted field so an indexed override can edit it."""
    if isinstance(nxt, int):
        cls = SECTIONS.get(section)
        default = getattr(cls(), key, None) if cls is not None else None
        if isinstance(default, tuple):
            return list(default)
        raise ConfigError(f"{section}.{key} is not a list")
    return {}


def to_json(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.raw, indent=2, sort_keys=True)
