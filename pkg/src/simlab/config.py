"""Declarative YAML experiment configuration.

One file describes everything a run needs: the nominal rigid body, network
and training hyper-parameters, controller weights, measurement noise, the
training-data recipe and the scenario matrix. Every constant named in the
module design notes is settable here; missing sections fall back to the
package defaults. See configs/default.yaml for a fully commented example.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dynamics import RigidBodyParams
from .errors import ConfigError
from .learner import TrainConfig
from .mpc import MODES, ControllerConfig
from .reference import TrajectoryParams
from .sim import (
    MixedPropellersPerturbation,
    PayloadPerturbation,
    Perturbation,
    WindPerturbation,
)

Array = np.ndarray


@dataclass(frozen=True)
class NoiseConfig:
    """Std deviations of the zero-mean Gaussian measurement noise."""

    position: float = 1e-3
    velocity: float = 1e-2
    attitude: float = 1e-3  # tangent-space radians
    body_rate: float = 1e-2


@dataclass(frozen=True)
class DatasetConfig:
    """Recipe for simulator-generated training data."""

    minutes: float = 30.0
    episode_seconds: float = 50.0
    excitation_std: float = 0.05  # N of white noise on each rotor command
    seed: int = 7
    directory: str = "data/train"


@dataclass
class ScenarioConfig:
    name: str
    trajectory: TrajectoryParams
    perturbation: Perturbation
    duration: float = 30.0
    modes: tuple[str, ...] = ("nominal", "static", "adaptive")
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.duration <= 0.0:
            raise ConfigError(f"scenario '{self.name}': duration must be positive")
        for m in self.modes:
            if m not in MODES:
                raise ConfigError(f"scenario '{self.name}': unknown mode '{m}'")


@dataclass
class ExperimentConfig:
    rigid_body: RigidBodyParams = field(default_factory=RigidBodyParams)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    scenarios: list[ScenarioConfig] = field(default_factory=list)
    substeps: int = 50  # physics substeps per control period
    params_path: str = "params.json"


def _require_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")


def _build(cls, section: dict, where: str, **overrides):
    fields = {f for f in cls.__dataclass_fields__}
    _require_keys(section, fields, where)
    try:
        return cls(**{**section, **overrides})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_perturbation(section: dict | None, where: str) -> Perturbation:
    if section is None:
        return None
    if "type" not in section:
        raise ConfigError(f"{where}: perturbation needs a 'type' field")
    kind = section["type"]
    body = {k: v for k, v in section.items() if k != "type"}
    if kind == "none":
        if body:
            raise ConfigError(f"{where}: perturbation 'none' takes no fields")
        return None
    if kind == "payload":
        return _build(PayloadPerturbation, body, where)
    if kind == "mixed_propellers":
        return _build(MixedPropellersPerturbation, body, where)
    if kind == "wind":
        return _build(WindPerturbation, body, where)
    raise ConfigError(f"{where}: unknown perturbation type '{kind}'")


def _parse_scenario(section: dict, index: int) -> ScenarioConfig:
    where = f"scenarios[{index}]"
    if "name" not in section:
        raise ConfigError(f"{where}: scenario needs a name")
    name = section["name"]
    allowed = {"name", "trajectory", "perturbation", "duration", "modes", "seeds"}
    _require_keys(section, allowed, where)
    traj = _build(TrajectoryParams, dict(section.get("trajectory", {})), f"{where}.trajectory")
    pert = _parse_perturbation(section.get("perturbation"), where)
    kwargs = {}
    if "duration" in section:
        kwargs["duration"] = float(section["duration"])
    if "modes" in section:
        kwargs["modes"] = tuple(section["modes"])
    if "seeds" in section:
        kwargs["seeds"] = tuple(int(s) for s in section["seeds"])
    return ScenarioConfig(name=name, trajectory=traj, perturbation=pert, **kwargs)


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a YAML experiment file; raises ConfigError with the
    offending field on any problem."""
    path = Path(path)
    try:
        with open(path) as f:
            doc = yaml.safe_load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    allowed = {
        "rigid_body",
        "controller",
        "training",
        "noise",
        "dataset",
        "scenarios",
        "substeps",
        "params_path",
    }
    _require_keys(doc, allowed, str(path))

    cfg = ExperimentConfig()
    if "rigid_body" in doc:
        cfg.rigid_body = _build(RigidBodyParams, dict(doc["rigid_body"]), "rigid_body")
    if "controller" in doc:
        section = dict(doc["controller"])
        for key in ("qx", "qu"):
            if key in section:
                section[key] = np.asarray(section[key], dtype=np.float64)
        if "sigma_clamp" in section:
            section["sigma_clamp"] = tuple(section["sigma_clamp"])
        cfg.controller = _build(ControllerConfig, section, "controller")
    if "training" in doc:
        section = dict(doc["training"])
        if "hidden" in section:
            section["hidden"] = tuple(int(h) for h in section["hidden"])
        if "lr_decay_at" in section:
            section["lr_decay_at"] = tuple(float(f) for f in section["lr_decay_at"])
        cfg.training = _build(TrainConfig, section, "training")
    if "noise" in doc:
        cfg.noise = _build(NoiseConfig, dict(doc["noise"]), "noise")
    if "dataset" in doc:
        cfg.dataset = _build(DatasetConfig, dict(doc["dataset"]), "dataset")
    if "substeps" in doc:
        cfg.substeps = int(doc["substeps"])
        if cfg.substeps < 1:
            raise ConfigError("substeps must be >= 1")
    if "params_path" in doc:
        cfg.params_path = str(doc["params_path"])
    scenarios = doc.get("scenarios", [])
    if not isinstance(scenarios, list):
        raise ConfigError("scenarios must be a list")
    cfg.scenarios = [_parse_scenario(dict(s), i) for i, s in enumerate(scenarios)]
    return cfg
