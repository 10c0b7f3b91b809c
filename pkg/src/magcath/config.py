"""Run configuration: one YAML file, section per module, with validation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .dqn import DqnConfig
from .plant import PlantParams
from .surrogate import TrainConfig
from .td3 import Td3Config


@dataclass
class CampaignConfig:
    trials_per_family: int = 40
    dt: float = 0.1
    split: tuple = (0.7, 0.15, 0.15)

    def __post_init__(self):
        if self.trials_per_family < 1:
            raise ValueError("trials_per_family must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        self.split = tuple(float(s) for s in self.split)
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split must be three fractions summing to 1")


@dataclass
class EnvConfig:
    epsilon_mm: float = 0.5
    t_max: int = 150
    training_noise_sigma: float = 0.3
    effort_lambda: float = 5e-3
    padding: str = "zero"
    workspace_x: tuple = (-20.0, 45.0)
    workspace_y: tuple = (-45.0, 40.0)

    def __post_init__(self):
        if self.epsilon_mm <= 0:
            raise ValueError("epsilon_mm must be positive")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.training_noise_sigma < 0:
            raise ValueError("training_noise_sigma must be non-negative")
        if self.effort_lambda < 0:
            raise ValueError("effort_lambda must be non-negative")
        if self.padding not in ("zero", "warm"):
            raise ValueError("padding must be 'zero' or 'warm'")
        self.workspace_x = tuple(float(v) for v in self.workspace_x)
        self.workspace_y = tuple(float(v) for v in self.workspace_y)


@dataclass
class EvalConfig:
    n_starts: int = 100
    goal: tuple = (20.0, -10.0)
    thresholds_mm: tuple = (0.5, 0.02)
    waypoint_tol_mm: float = 0.5
    waypoint_max_steps: int = 20
    n_waypoints: int = 60
    seed_offset: int = 5

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        self.goal = tuple(float(v) for v in self.goal)
        self.thresholds_mm = tuple(float(v) for v in self.thresholds_mm)
        if any(t <= 0 for t in self.thresholds_mm):
            raise ValueError("thresholds must be positive")


@dataclass
class RunConfig:
    seed: int = 0
    out_root: str = "runs/default"
    plant: PlantParams = field(default_factory=PlantParams)
    campaign: CampaignConfig = field(default_factory=CampaignConfig)
    surrogate: TrainConfig = field(default_factory=TrainConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    dqn: DqnConfig = field(default_factory=DqnConfig)
    td3: Td3Config = field(default_factory=Td3Config)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        return _plain(d)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data or {})
        kwargs = {}
        sections = {
            "plant": PlantParams, "campaign": CampaignConfig,
            "surrogate": TrainConfig, "env": EnvConfig,
            "dqn": DqnConfig, "td3": Td3Config, "eval": EvalConfig,
        }
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config section(s): {sorted(unknown)}")
        for name, section_cls in sections.items():
            section = data.get(name, {})
            if section is None:
                section = {}
            allowed = {f.name for f in fields(section_cls)}
            bad = set(section) - allowed
            if bad:
                raise ValueError(f"unknown key(s) in [{name}]: {sorted(bad)}")
            kwargs[name] = section_cls(**section)
        kwargs["seed"] = int(data.get("seed", 0))
        kwargs["out_root"] = str(data.get("out_root", "runs/default"))
        return cls(**kwargs)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    if isinstance(obj, list):
        return [_plain(v) for v in obj]
    return obj


def apply_overrides(config: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply "section.key=value" strings on top of a config.

    Values are parsed as YAML, so numbers, booleans, and lists work; the
    rebuilt config re-runs all section validation.
    """
    data = config.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ValueError(f"unknown config path {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ValueError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return RunConfig.from_dict(data)
