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
Exception hierarchy shared by every msmcalib module.

All errors derive from CalibrationError so that callers (the CLI, the
Monte-Carlo driver) can catch one type and report the class name.
"""


class CalibrationError(Exception):
    """Base class of all msmcalib errors."""


class ConfigError(CalibrationError, ValueError):
    """Invalid parameter object or run configuration."""


# geometry
class NonPositiveDepth(CalibrationError):
    """A point lies on or behind the image plane of the camera."""


class DegenerateGeometry(CalibrationError):
    """Rays or poses do not determine a point (zero baseline, parallel rays)."""


class InsufficientMatches(CalibrationError):
    """Fewer correspondences than the minimal sample."""


class NoConsensus(CalibrationError):
    """RANSAC did not find enough inliers."""


class AmbiguousDecomposition(CalibrationError):
    """Homography decomposition cannot single out one motion."""


# msm
class OutOfBounds(CalibrationError):
    """A scaled marker quad leaves the projector image."""


class ShapeMismatch(CalibrationError):
    """Grid size and array partition disagree."""


class DegenerateQuad(CalibrationError):
    """Corners with collinear triplets or parallel diagonals."""


class UnknownStep(CalibrationError):
    """A detection refers to a step that is not in the schedule."""


# simulator
class QuotaUnreachable(CalibrationError):
    """Board sampling could not reach the per-class observation quotas."""


# solver
class NoValidPair(CalibrationError):
    """No camera pair shares enough tracks to initialize."""


class InitializationFailed(CalibrationError):
    """Planar initialization of the first camera pair failed."""


class NoRegistrableCamera(CalibrationError):
    """No unregistered camera can be added to the reconstruction."""


class NonConvergence(CalibrationError):
    """Bundle adjustment produced a non-finite cost."""


class GaugeUndefined(CalibrationError):
    """The reference or baseline camera has no observations in the problem."""


# eval
class DegenerateConfiguration(CalibrationError):
    """Point sets too degenerate for a similarity alignment."""


class IdMismatch(CalibrationError):
    """Estimated and reference camera sets differ."""


class NoEvaluableTracks(CalibrationError):
    """No held-out track is seen by two registered cameras."""
