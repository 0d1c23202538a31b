"""Scenario configuration: YAML schema, defaults and strict validation.

Every section maps onto a dataclass below; unknown keys anywhere are an
error. Field names are the YAML keys. A minimal file::

    scenario: vector
    seed: 3
    noise:
      white_noise_density: 5.0e-7
    schedule:
      dwell: 0.1
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .lockin import quantize_f_ref
from .odmr import LineShapeParams, NoiseParams
from .spin import PhysicalConstants, bias_field

SCENARIOS = ("step", "range", "vector", "sensitivity", "spectrum")


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""


@dataclass
class ConstantsConfig:
    delta: float = 2.87e9
    beta_t: float = -7.4e4
    gamma: float = 28.0


@dataclass
class BiasConfig:
    """Bias field magnitude (nT) and direction in degrees (polar, azimuth)."""

    magnitude_nt: float = 7.8e6
    theta_deg: float = 76.5
    phi_deg: float = 62.5


@dataclass
class LinesConfig:
    v0: float = 1.0
    contrast: float = 0.01
    sigma: float = 5e5


@dataclass
class NoiseConfig:
    white_noise_density: float = 0.0
    laser_rin_density: float = 0.0
    drift_amplitude: float = 0.0
    drift_period: float = 10.0
    balanced: bool = True


@dataclass
class ChannelSpec:
    """One lock channel: target line plus modulation and loop settings.

    ``corner_ratio`` places the lock-in corner at that fraction of f_ref;
    ``loop_gain`` is the dimensionless g*K_I at the lock point.
    """

    axis: int = 0
    branch: int = -1
    m_i: int = -1
    f_ref: float = 1824.0
    f_dev: float = 3.2e5
    phase: float = math.pi
    corner_ratio: float = 1.0
    loop_gain: float = 0.8


@dataclass
class StepSchedule:
    duration: float = 0.5
    step_time: float = 0.1
    step_nt: float = 1.5e4
    contrasts: list = field(default_factory=lambda: [0.002, 0.0063245553203367, 0.02])
    tolerance_nt: float = 100.0


@dataclass
class RangeSchedule:
    duration: float = 60.0
    amplitude_nt: float = 4e6
    direction: list = field(default_factory=lambda: [1.0, 1.0, 0.0])
    open_loop_f_dev: float = 1e5
    open_loop_tolerance: float = 0.05
    max_error_nt: float = 1e3
    min_ratio: float = 1e3
    settle_time: float = 0.05


@dataclass
class VectorSchedule:
    dwell: float = 0.1
    cycles_per_field: int = 2
    field_nt: float = 1e4
    tolerance_nt: float = 200.0
    redundancy_noise_hz: float = 50.0
    redundancy_threshold: float = 5.0


@dataclass
class SensitivitySchedule:
    duration: float = 120.0
    densities: list = field(default_factory=lambda: [5e-7, 1e-6, 5e-6])
    slope_tolerance: float = 0.05
    linearity_tolerance: float = 0.10
    settle_time: float = 0.2
    raw_seconds: float = 0.0


@dataclass
class SpectrumSchedule:
    f_min: float | None = None
    f_max: float | None = None
    step: float | None = None
    margin: float = 5e6
    corner_ratio: float = 0.1
    f_dev: float = 1e5
    f_ref: float = 1824.0


SCHEDULES = {
    "step": StepSchedule,
    "range": RangeSchedule,
    "vector": VectorSchedule,
    "sensitivity": SensitivitySchedule,
    "spectrum": SpectrumSchedule,
}


def _default_channels():
    return [ChannelSpec(0, -1, -1, 1824.0), ChannelSpec(0, 1, 0, 2281.3)]


@dataclass
class ScenarioConfig:
    scenario: str = "step"
    seed: int = 0
    sample_rate: float = 2e5
    model: str = "linear"
    splitting: float = 2.16e6
    max_f_ref: float = 2e4
    max_field_nt: float = 2e7
    constants: ConstantsConfig = field(default_factory=ConstantsConfig)
    bias: BiasConfig = field(default_factory=BiasConfig)
    lines: LinesConfig = field(default_factory=LinesConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    channels: list = field(default_factory=_default_channels)
    schedule: object = None

    # derived objects used by the scenarios

    def physical_constants(self):
        c = self.constants
        return PhysicalConstants(c.delta, c.beta_t, c.gamma)

    def line_shape(self, contrast=None):
        ln = self.lines
        return LineShapeParams(ln.v0, ln.contrast if contrast is None else contrast, ln.sigma)

    def noise_params(self, white=None):
        nz = self.noise
        return NoiseParams(nz.white_noise_density if white is None else white,
                           nz.laser_rin_density, nz.drift_amplitude, nz.drift_period,
                           int(self.seed))

    def bias_vector(self):
        b = self.bias
        return bias_field(b.magnitude_nt, math.radians(b.theta_deg), math.radians(b.phi_deg))

    def to_dict(self):
        return dataclasses.asdict(self)

    def dump(self):
        """Canonical YAML text of the full resolved configuration."""
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)


# per-scenario defaults differing from the dataclass defaults
SCENARIO_DEFAULTS = {
    "range": {"sample_rate": 1e5},
    "sensitivity": {"sample_rate": 1e5, "noise": {"white_noise_density": 5e-7}},
    "vector": {"model": "full",
               "noise": {"white_noise_density": 5e-7, "laser_rin_density": 1e-4,
                         "drift_amplitude": 1e-3}},
}


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        where = f" in section '{path}'" if path else ""
        raise ConfigError(f"unknown key(s){where}: {', '.join(unknown)}; "
                          f"allowed: {', '.join(sorted(names))}")
    kwargs = {}
    for key, value in data.items():
        sub = _SECTIONS.get((cls, key))
        where = f"{path}.{key}" if path else key
        if sub is not None:
            kwargs[key] = _build(sub, value, where)
        elif key == "channels":
            if not isinstance(value, list) or not value:
                raise ConfigError("channels: expected a non-empty list")
            kwargs[key] = [_build(ChannelSpec, v, f"channels[{k}]") for k, v in enumerate(value)]
        else:
            kwargs[key] = _coerce(value, names[key].type, where)
    return cls(**kwargs)


def _number(value, kind, where):
    # YAML 1.1 reads exponents without a sign ("2.0e4") as strings
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    try:
        out = kind(value) if kind is float else int(str(value), 10)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected {kind.__name__}, got {value!r}") from None
    if kind is int and isinstance(value, float) and value != out:
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    return out


def _coerce(value, annotation, where):
    """Convert a YAML scalar or list to the type named by a field annotation."""
    ann = str(annotation)
    if value is None and "None" in ann:
        return None
    if ann.startswith("float"):
        return _number(value, float, where)
    if ann == "int":
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        return _number(value, int, where)
    if ann == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true or false, got {value!r}")
        return value
    if ann == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if ann == "list":
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return [_number(v, float, f"{where}[{k}]") for k, v in enumerate(value)]
    return value


_SECTIONS = {
    (ScenarioConfig, "constants"): ConstantsConfig,
    (ScenarioConfig, "bias"): BiasConfig,
    (ScenarioConfig, "lines"): LinesConfig,
    (ScenarioConfig, "noise"): NoiseConfig,
}


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def config_from_dict(data, scenario=None):
    """Build and validate a :class:`ScenarioConfig` from plain data."""
    data = dict(data or {})
    name = scenario or data.get("scenario", "step")
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    if scenario and data.get("scenario", scenario) != scenario:
        raise ConfigError(f"config is for scenario {data['scenario']!r}, not {scenario!r}")
    data["scenario"] = name
    data = _merge(SCENARIO_DEFAULTS.get(name, {}), data)
    schedule = data.pop("schedule", None) or {}
    cfg = _build(ScenarioConfig, data, "")
    cfg.schedule = _build(SCHEDULES[name], schedule, "schedule")
    validate(cfg)
    return cfg


def load_config(path=None, scenario=None, seed=None):
    """Read a YAML config (or defaults when ``path`` is None) and validate."""
    data = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path}: top level must be a mapping of keys")
    if seed is not None:
        data = dict(data, seed=int(seed))
    return config_from_dict(data, scenario)


def _check(cond, msg):
    if not cond:
        raise ConfigError(msg)


def validate(cfg):
    """Check module invariants before a run; raises :class:`ConfigError`."""
    _check(isinstance(cfg.seed, int) and cfg.seed >= 0, "seed must be a non-negative integer")
    _check(cfg.model in ("linear", "full"), f"model must be 'linear' or 'full', got {cfg.model!r}")
    _check(cfg.sample_rate > 0, "sample_rate must be positive")
    _check(cfg.splitting >= 0, "splitting must be non-negative")
    try:
        cfg.physical_constants()
        cfg.line_shape()
        cfg.noise_params()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    _check(np.linalg.norm(cfg.bias_vector()) <= cfg.max_field_nt,
           f"bias magnitude {cfg.bias.magnitude_nt:g} nT exceeds max_field_nt {cfg.max_field_nt:g}")
    refs = []
    for k, ch in enumerate(cfg.channels):
        _check(ch.axis in range(4), f"channels[{k}].axis must be 0..3")
        _check(ch.branch in (-1, 1), f"channels[{k}].branch must be -1 or +1")
        _check(ch.m_i in (-1, 0, 1), f"channels[{k}].m_i must be -1, 0 or +1")
        _check(ch.f_ref > 0, f"channels[{k}].f_ref must be positive")
        _check(ch.f_ref <= cfg.max_f_ref,
               f"channels[{k}].f_ref={ch.f_ref:g} Hz exceeds the {cfg.max_f_ref:g} Hz NV "
               "response bandwidth; choose a lower modulation frequency")
        _check(0 < ch.f_dev <= cfg.lines.sigma,
               f"channels[{k}].f_dev must lie in (0, sigma]")
        _check(ch.corner_ratio > 0, f"channels[{k}].corner_ratio must be positive")
        _check(ch.loop_gain > 0, f"channels[{k}].loop_gain must be positive")
        _check(cfg.sample_rate >= 20 * ch.f_ref,
               f"sample_rate {cfg.sample_rate:g} is below 20x channels[{k}].f_ref")
        refs.append(ch.f_ref)
    dup = sorted({f for f in refs if refs.count(f) > 1})
    _check(not dup, f"duplicate f_ref {', '.join(f'{f:g}' for f in dup)} Hz across channels; "
                    "give every channel its own modulation frequency")
    q = [quantize_f_ref(f, cfg.sample_rate) for f in refs]
    _check(len(set(q)) == len(q),
           "channel f_ref values collapse to the same whole-sample period at this "
           "sample_rate; spread them further apart")
    if cfg.scenario in ("step", "range", "sensitivity"):
        _check(len(cfg.channels) == 2, f"{cfg.scenario} needs exactly 2 channels (lower, upper)")
        lo, up = cfg.channels
        _check(lo.branch == -1 and up.branch == 1 and lo.axis == up.axis,
               "channels must be (lower branch, upper branch) of one orientation class")
    if cfg.scenario == "vector":
        _check(len(cfg.channels) == 2, "vector needs exactly 2 channel slots (lower, upper)")
        _check(cfg.channels[0].branch == -1 and cfg.channels[1].branch == 1,
               "vector channel slots must be (lower branch, upper branch)")
    s = cfg.schedule
    if isinstance(s, StepSchedule):
        _check(0 <= s.step_time < s.duration, "schedule.step_time must lie inside the run")
        _check(len(s.contrasts) >= 1 and all(0 < c < 1 for c in s.contrasts),
               "schedule.contrasts must be values in (0, 1)")
    elif isinstance(s, RangeSchedule):
        _check(s.duration > 0, "schedule.duration must be positive")
        _check(len(s.direction) == 3 and np.linalg.norm(s.direction) > 0,
               "schedule.direction must be a non-zero 3-vector")
    elif isinstance(s, VectorSchedule):
        _check(s.dwell > 0 and s.cycles_per_field >= 1, "schedule.dwell and cycles_per_field")
    elif isinstance(s, SensitivitySchedule):
        _check(s.duration > 0 and len(s.densities) >= 1 and all(d > 0 for d in s.densities),
               "schedule.densities must be positive")
    elif isinstance(s, SpectrumSchedule):
        _check(s.step is None or 0 < s.step <= cfg.lines.sigma / 10,
               "schedule.step must lie in (0, sigma/10]")
    return cfg
