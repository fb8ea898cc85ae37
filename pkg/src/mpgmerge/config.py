"""Experiment configuration.

Configs are nested dataclasses serialised as YAML or JSON.  Loading rejects
unknown keys and ill-typed values with :class:`ConfigError`, whose ``keys``
attribute lists every offending dotted path.  ``resolved_dict`` emits every
field, defaults included, so an artifact can be regenerated from its echo.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from mpgmerge.dynamics import G


class ConfigError(ValueError):
    def __init__(self, message: str, keys: Optional[list] = None):
        super().__init__(message)
        self.keys = list(keys or [])


@dataclass
class GeometryConfig:
    l_f: float = 1.4
    l_r: float = 1.4
    body_length: float = 4.5
    body_width: float = 1.8


@dataclass
class MergeRewardSpec:
    w11: float = 1.0
    w12: float = 0.5
    w21: float = 20.0
    w22: float = 20.0
    v_d: float = 15.0
    v_c: float = 1.0
    eps: float = 0.1
    x_c: float = 180.0
    tau_s: float = 3.0
    virtual_projection: bool = True
    min_gap: float = 2.0


@dataclass
class ScenarioConfig:
    n_leaders: int = 4
    n_followers: int = 4
    dt: float = 0.1
    horizon: float = 30.0
    gamma: float = 0.99
    x_c: float = 180.0
    lane_width: float = 3.6
    ego_x_range: tuple = (80.0, 120.0)
    ego_v_range: tuple = (8.0, 14.0)
    lane_span: float = 90.0
    lane_v_range: tuple = (8.0, 14.0)
    min_headway: float = 7.0
    min_ttc: float = 4.0
    max_rejections: int = 10_000
    geometry: GeometryConfig = field(default_factory=GeometryConfig)

    @property
    def n_agents(self) -> int:
        return 1 + self.n_leaders + self.n_followers

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class NetworkConfig:
    hidden: tuple = (64, 64)
    negative_slope: float = 0.01
    action_bound: float = G
    init_scale: float = 1.0
    position_scale: float = 200.0
    speed_scale: float = 30.0
    d_max: float = 200.0


@dataclass
class TrainerConfig:
    epochs: int = 600
    eta: float = 1e-3
    eta_decay: float = 0.02
    grad_clip: float = 10.0
    batch_size: int = 32
    fresh_batches: bool = True
    frozen_batch_size: int = 32
    probe_size: int = 256
    param_noise: float = 0.0


@dataclass
class IdmConfig:
    v0: float = 15.0
    time_headway: float = 1.5
    s0: float = 2.0
    a_max: float = 1.5
    b: float = 2.0
    delta: float = 4.0


@dataclass
class EvalConfig:
    n_scenarios: int = 500
    seed_offset: int = 10_000
    idm: IdmConfig = field(default_factory=IdmConfig)


@dataclass
class IngestConfig:
    delimiter: str = ","
    column_map: dict = field(default_factory=lambda: {
        "vehicle_id": "Vehicle_ID", "frame": "Frame_ID",
        "x": "Local_Y", "y": "Local_X", "lane": "Lane_ID"})
    feet_to_meters: bool = True
    frame_rate: float = 10.0
    window: int = 21
    order: int = 3
    lane_boundaries: tuple = (0.0, 3.7, 7.4, 11.1, 14.8, 18.5, 22.2, 25.9)
    ramp_lanes: tuple = (7,)
    target_lane: int = 6
    x_c: float = 180.0
    horizon: float = 30.0


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    reward: MergeRewardSpec = field(default_factory=MergeRewardSpec)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    seeds: tuple = (0, 1, 2, 3, 4)

    def validate(self) -> "ExperimentConfig":
        bad = []
        s, r, t = self.scenario, self.reward, self.trainer
        checks = [
            ("scenario.dt", s.dt > 0), ("scenario.horizon", s.horizon > 0),
            ("scenario.gamma", 0 <= s.gamma < 1), ("scenario.min_headway", s.min_headway > 0),
            ("scenario.min_ttc", s.min_ttc > 0), ("scenario.n_leaders", s.n_leaders >= 0),
            ("scenario.n_followers", s.n_followers >= 0),
            ("scenario.ego_x_range", s.ego_x_range[0] <= s.ego_x_range[1]),
            ("scenario.ego_v_range", 0 <= s.ego_v_range[0] <= s.ego_v_range[1] <= 30),
            ("scenario.lane_v_range", 0 <= s.lane_v_range[0] <= s.lane_v_range[1] <= 30),
            ("reward.eps", r.eps > 0), ("reward.v_d", 0 < r.v_d <= 30), ("reward.v_c", r.v_c > 0),
            ("reward.tau_s", r.tau_s > 0), ("reward.min_gap", r.min_gap >= 0), ("trainer.eta", t.eta >= 0),
            ("trainer.batch_size", t.batch_size > 0), ("trainer.epochs", t.epochs >= 0),
            ("trainer.probe_size", t.probe_size > 0), ("trainer.grad_clip", t.grad_clip > 0),
            ("network.hidden", len(self.network.hidden) == 2 and min(self.network.hidden) > 0),
            ("ingest.window", self.ingest.window % 2 == 1 and self.ingest.order < self.ingest.window),
            ("seeds", len(self.seeds) > 0),
        ]
        bad = [k for k, ok in checks if not ok]
        if bad:
            raise ConfigError("invalid config values: " + ", ".join(bad), bad)
        return self


def _build(cls, data: Any, path: str, bad: list):
    if not isinstance(data, dict):
        bad.append(path or "<root>")
        return cls()
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        dotted = f"{path}.{key}" if path else key
        if key not in fields:
            bad.append(dotted)
            continue
        default = fields[key].default_factory() if fields[key].default_factory is not dataclasses.MISSING \
            else fields[key].default
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, dotted, bad)
        elif isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                bad.append(dotted)
                continue
            kwargs[key] = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                bad.append(dotted)
                continue
            kwargs[key] = value
        elif isinstance(default, (int, float)):
            numeric = isinstance(value, (int, float)) and not isinstance(value, bool)
            if not numeric or (isinstance(default, int) and not float(value).is_integer()):
                bad.append(dotted)
                continue
            kwargs[key] = type(default)(value)
        elif isinstance(default, dict):
            if not isinstance(value, dict):
                bad.append(dotted)
                continue
            kwargs[key] = dict(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    bad: list = []
    cfg = _build(ExperimentConfig, data or {}, "", bad)
    if bad:
        raise ConfigError("unknown or ill-typed config keys: " + ", ".join(bad), bad)
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text) if str(path).endswith((".yaml", ".yml")) else json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}", ["<file>"]) from exc
    return config_from_dict(data or {})


def _plain(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def resolved_dict(cfg: ExperimentConfig) -> dict:
    return _plain(cfg)


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(resolved_dict(cfg), indent=2, sort_keys=True) + "\n")


def full_config() -> ExperimentConfig:
    """Full-size forced-merge setup: nine players, 30 s horizon."""
    return ExperimentConfig()


def desk_config() -> ExperimentConfig:
    """Reduced setup: ego plus two leaders and two followers, 15 s horizon."""
    cfg = ExperimentConfig()
    cfg.scenario.n_leaders = 2
    cfg.scenario.n_followers = 2
    cfg.scenario.horizon = 15.0
    cfg.scenario.lane_span = 60.0
    cfg.seeds = (0, 1, 2)
    cfg.evaluation.n_scenarios = 50
    return cfg
