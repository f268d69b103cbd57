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
msmcalib: external calibration of multi-camera rigs from projected multi-scale
markers, with a synthetic simulator and an evaluation harness.
"""
__version__ = "1.0.0"

from .errors import CalibrationError, ConfigError  # noqa: E402
from .geometry import Camera, CameraIntrinsics, CameraRig, Homography, Pose  # noqa: E402
from .msm import ObservationSet, ProjectionSchedule, fuse_detections, generate_schedule  # noqa: E402
from .simulator import Scenario, ScenarioConfig, run_monte_carlo, simulate_scene  # noqa: E402
from .solver import Reconstruction, SolverOptions, calibrate  # noqa: E402
from .evaluation import EvaluationReport, evaluate  # noqa: E402

__all__ = [
    "CalibrationError",
    "ConfigError",
    "Camera",
    "CameraIntrinsics",
    "CameraRig",
    "Homography",
    "Pose",
    "ObservationSet",
    "ProjectionSchedule",
    "fuse_detections",
    "generate_schedule",
    "Scenario",
    "ScenarioConfig",
    "run_monte_carlo",
    "simulate_scene",
    "Reconstruction",
    "SolverOptions",
    "calibrate",
    "EvaluationReport",
    "evaluate",
]
