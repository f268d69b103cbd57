# Copyright 2025 The msmcalib Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""
Declarative run configuration.

A RunConfig groups the parameter sets of every command. It is read from a JSON
file (unknown keys are rejected at every level), overridden by command-line
flags, and embedded in full in every artifact the run writes.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from . import __version__
from .errors import ConfigError
from .msm import DEFAULT_SCALES, PROJECTOR_SIZE, ProjectorGrid, ScaleSet
from .simulator import DEFAULT_SIGMAS, Scenario, ScenarioConfig, VisibilityModel
from .solver import SolverOptions


@dataclass(frozen=True)
class ScheduleConfig:
    arrays: int = 100
    per_array: int = 32
    rows: int = 40
    cols: int = 80
    scales: tuple = DEFAULT_SCALES
    pattern_side: float = 24.0
    step_duration: float = 0.1
    projector_width: int = PROJECTOR_SIZE[0]
    projector_height: int = PROJECTOR_SIZE[1]

    def __post_init__(self):
        object.__setattr__(self, "scales", ScaleSet(tuple(self.scales)).values)
        if not self.step_duration > 0:
            raise ConfigError(f"step_duration must be positive, got {self.step_duration}")

    def grid(self):
        # keep the largest marker inside the projector image
        margin = 0.5 * self.pattern_side * max(self.scales) + 4.0
        return ProjectorGrid(
            self.rows,
            self.cols,
            margin,
            self.projector_width - margin,
            margin,
            self.projector_height - margin,
        )


@dataclass(frozen=True)
class PathsConfig:
    scene: str | None = None
    detections: str | None = None
    schedule: str | None = None
    reconstruction: str | None = None
    summary: str | None = None
    out: str | None = None


@dataclass(frozen=True)
class MonteCarloConfig:
    trials: int = 1
    sigmas: tuple = DEFAULT_SIGMAS
    scenarios: tuple = tuple(s.value for s in Scenario)

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        sigmas = tuple(float(s) for s in self.sigmas)
        if any(s < 0 for s in sigmas):
            raise ConfigError(f"noise levels must be >= 0: {sigmas}")
        try:
            scenarios = tuple(Scenario(s).value for s in self.scenarios)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "scenarios", scenarios)


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    solver: SolverOptions = field(default_factory=SolverOptions)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    montecarlo: MonteCarloConfig = field(default_factory=MonteCarloConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0
    threads: int = 1
    version: str = __version__

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")

    def to_dict(self):
        data = asdict(self)
        data["scenario"] = self.scenario.to_dict()
        return data

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("run configuration must be a JSON object")
        _check_keys(cls, data, "config")
        sections = {
            "scenario": _build_scenario,
            "solver": lambda d: _build(SolverOptions, d, "solver"),
            "schedule": lambda d: _build(ScheduleConfig, d, "schedule"),
            "montecarlo": lambda d: _build(MonteCarloConfig, d, "montecarlo"),
            "paths": lambda d: _build(PathsConfig, d, "paths"),
        }
        kwargs = {}
        for key, value in data.items():
            kwargs[key] = sections[key](value) if key in sections else value
        return cls(**kwargs)

    def override(self, **changes):
        """Copy with top-level or dotted section fields replaced (`solver.seed=3`); None values are ignored."""
        top, nested = {}, {}
        for key, value in changes.items():
            if value is None:
                continue
            if "." in key:
                section, name = key.split(".", 1)
                nested.setdefault(section, {})[name] = value
            else:
                top[key] = value
        for section, values in nested.items():
            top[section] = replace(getattr(self, section), **values)
        return replace(self, **top)


def _check_keys(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


def _build(cls, data, where):
    _check_keys(cls, data, where)
    try:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from None


def _build_scenario(data):
    data = dict(data)
    if "visibility" in data:
        data["visibility"] = _build(VisibilityModel, data["visibility"], "scenario.visibility")
    return _build(ScenarioConfig, data, "scenario")


def load_config(path=None):
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return RunConfig.from_dict(data)
