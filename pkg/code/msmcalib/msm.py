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
Multi-scale markers (MSM): a planar pattern projected at several scales that
all share one center, the projection schedule that sweeps a dense grid of such
centers over the floor, and the fusion of per-scale detections into one
observation per (camera, marker).

Key Features:
- Square fiducial patterns whose center is the intersection of the diagonals,
  a projective invariant, so the imaged center does not depend on the scale at
  which a camera detects the marker.
- Interleaved projection arrays: array `a` holds every grid node whose linear
  index is congruent to `a` modulo the number of arrays; steps run array-major,
  then scale-major.
- Median fusion of detections with a 1 px consistency gate.

Input:
- Detections as (camera_id, step_id, marker_id, scale_index, corners | center)
  records, typically read from a JSON-lines file by `msmcalib.storage`.

Output:
- `ProjectionSchedule` (exportable as JSON step records for a playback tool).
- `ObservationSet` consumed by the solver and the evaluation.

Dependencies:
- numpy
- pandas (grouping of detections, tabular views of observations)
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd

from .errors import ConfigError, DegenerateQuad, OutOfBounds, ShapeMismatch, UnknownStep

logger = logging.getLogger(__name__)

DEFAULT_SCALES = (1.0, 1.4, 2.0, 3.0, 4.0, 6.0, 8.0)
PROJECTOR_SIZE = (1920, 1080)
FUSION_GATE_PX = 1.0


class PatternKind(enum.Enum):
    SQUARE = "square"
    # listed for completeness; center extraction exists only for squares
    CONCENTRIC_CIRCLES = "concentric_circles"


@dataclass(frozen=True)
class PatternSpec:
    """Unscaled pattern: nominal side in projector pixels around its center c."""

    kind: PatternKind = PatternKind.SQUARE
    side: float = 24.0
    center: tuple = (0.0, 0.0)
    marker_id: int = 0

    def __post_init__(self):
        if not self.side > 0:
            raise ConfigError(f"pattern side must be positive, got {self.side}")
        object.__setattr__(self, "kind", PatternKind(self.kind))

    def corners(self):
        """Corner quad (top-left, top-right, bottom-right, bottom-left)."""
        if self.kind is not PatternKind.SQUARE:
            raise NotImplementedError(f"corner quad is not defined for {self.kind.value} patterns")
        h = 0.5 * self.side
        offsets = np.array([[-h, -h], [h, -h], [h, h], [-h, h]])
        return np.asarray(self.center, dtype=float) + offsets


@dataclass(frozen=True)
class ScaleSet:
    values: tuple = DEFAULT_SCALES

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ConfigError("scale set is empty")
        if any(v <= 0 for v in values):
            raise ConfigError(f"scales must be positive: {values}")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigError(f"scales must be strictly increasing: {values}")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, index):
        return self.values[index]


class Placement(NamedTuple):
    scale_index: int
    scale: float
    corners: np.ndarray  # (4, 2) projector pixels
    center: np.ndarray  # (2,)


@dataclass(frozen=True, eq=False)
class MsmDefinition:
    center: np.ndarray
    pattern: PatternSpec
    scales: ScaleSet
    placements: tuple

    @property
    def marker_id(self):
        return self.pattern.marker_id


def build_msm_definition(p, pattern=None, scales=None, projector_size=PROJECTOR_SIZE):
    """Scaled copies of `pattern` re-centred on the projector point `p`."""
    pattern = pattern or PatternSpec()
    scales = scales or ScaleSet()
    p = np.asarray(p, dtype=float).reshape(2)
    base = pattern.corners()
    c = np.asarray(pattern.center, dtype=float)
    width, height = projector_size
    placements = []
    for index, lam in enumerate(scales):
        corners = lam * (base - c) + p
        if corners.min() < 0 or np.any(corners[:, 0] > width) or np.any(corners[:, 1] > height):
            raise OutOfBounds(
                f"marker {pattern.marker_id} at ({p[0]:.1f}, {p[1]:.1f}) leaves the "
                f"{width}x{height} projector image at scale {lam}"
            )
        placements.append(Placement(index, lam, corners, p.copy()))
    return MsmDefinition(p, pattern, scales, tuple(placements))


@dataclass(frozen=True)
class ProjectorGrid:
    """rows x cols lattice of marker centers over a projector-pixel rectangle."""

    rows: int = 40
    cols: int = 80
    x_min: float = 100.0
    x_max: float = 1820.0
    y_min: float = 100.0
    y_max: float = 980.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"grid needs at least one node, got {self.rows}x{self.cols}")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ConfigError("grid rectangle is inverted")

    def __len__(self):
        return self.rows * self.cols

    def nodes(self):
        """Grid nodes in row-major order; node i is marker id i."""
        xs = np.linspace(self.x_min, self.x_max, self.cols)
        ys = np.linspace(self.y_min, self.y_max, self.rows)
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack((gx.ravel(), gy.ravel()))


class ScheduleStep(NamedTuple):
    step_id: int
    array_id: int
    scale_index: int
    scale: float
    marker_ids: tuple
    corners: np.ndarray  # (M, 4, 2)
    centers: np.ndarray  # (M, 2)


@dataclass(frozen=True, eq=False)
class ProjectionSchedule:
    steps: tuple
    scales: ScaleSet
    projector_size: tuple = PROJECTOR_SIZE
    step_duration: float = 0.1
    pattern_side: float = 24.0
    _index: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {s.step_id: s for s in self.steps})

    def __len__(self):
        return len(self.steps)

    def step(self, step_id):
        try:
            return self._index[int(step_id)]
        except KeyError:
            raise UnknownStep(f"step {step_id} is not part of the schedule") from None

    def __contains__(self, step_id):
        return int(step_id) in self._index

    @property
    def duration(self):
        return len(self.steps) * self.step_duration

    @property
    def arrays(self):
        return len({s.array_id for s in self.steps})

    def marker_centers(self):
        """Projector center of every marker, keyed by marker id."""
        centers = {}
        for step in self.steps:
            for marker_id, center in zip(step.marker_ids, step.centers):
                centers.setdefault(int(marker_id), center)
        return centers

    def to_records(self):
        records = []
        for step in self.steps:
            for marker_id, corners, center in zip(step.marker_ids, step.corners, step.centers):
                records.append(
                    {
                        "step_id": int(step.step_id),
                        "array_id": int(step.array_id),
                        "scale_index": int(step.scale_index),
                        "marker_id": int(marker_id),
                        "corners": corners.tolist(),
                        "center": center.tolist(),
                    }
                )
        return records

    def to_dict(self):
        return {
            "projector_size": list(self.projector_size),
            "step_duration": self.step_duration,
            "pattern_side": self.pattern_side,
            "scales": list(self.scales.values),
            "steps": self.to_records(),
        }

    @classmethod
    def from_dict(cls, data):
        scales = ScaleSet(tuple(data["scales"]))
        frame = pd.DataFrame(data["steps"])
        steps = []
        for step_id, group in frame.groupby("step_id", sort=True):
            scale_index = int(group["scale_index"].iloc[0])
            steps.append(
                ScheduleStep(
                    int(step_id),
                    int(group["array_id"].iloc[0]),
                    scale_index,
                    scales[scale_index],
                    tuple(int(m) for m in group["marker_id"]),
                    np.array(group["corners"].tolist(), dtype=float),
                    np.array(group["center"].tolist(), dtype=float),
                )
            )
        return cls(
            tuple(steps),
            scales,
            tuple(data.get("projector_size", PROJECTOR_SIZE)),
            float(data.get("step_duration", 0.1)),
            float(data.get("pattern_side", 24.0)),
        )


def generate_schedule(
    grid=None,
    arrays=100,
    msms_per_array=32,
    scales=None,
    pattern_side=24.0,
    projector_size=PROJECTOR_SIZE,
    step_duration=0.1,
):
    """Partition the grid into interleaved arrays and emit one step per (array, scale)."""
    grid = grid or ProjectorGrid()
    scales = scales or ScaleSet()
    if arrays < 1 or msms_per_array < 1 or arrays * msms_per_array != len(grid):
        raise ShapeMismatch(
            f"{arrays} arrays x {msms_per_array} markers does not cover a "
            f"{grid.rows}x{grid.cols} grid ({len(grid)} nodes)"
        )
    nodes = grid.nodes()
    marker_ids = np.arange(len(nodes))
    definitions = [
        build_msm_definition(node, PatternSpec(side=pattern_side, marker_id=int(i)), scales, projector_size)
        for i, node in zip(marker_ids, nodes)
    ]

    steps = []
    for array_id in range(arrays):
        members = marker_ids[marker_ids % arrays == array_id]
        for scale_index, lam in enumerate(scales):
            steps.append(
                ScheduleStep(
                    array_id * len(scales) + scale_index,
                    array_id,
                    scale_index,
                    lam,
                    tuple(int(m) for m in members),
                    np.stack([definitions[m].placements[scale_index].corners for m in members]),
                    nodes[members].copy(),
                )
            )
    logger.info(
        "schedule: %d arrays x %d markers x %d scales = %d steps (%.1f s)",
        arrays,
        msms_per_array,
        len(scales),
        len(steps),
        len(steps) * step_duration,
    )
    return ProjectionSchedule(tuple(steps), scales, tuple(projector_size), step_duration, pattern_side)


def center_from_square_corners(corners):
    """Intersection of the quad diagonals (c0, c2) and (c1, c3)."""
    c = np.asarray(corners, dtype=float).reshape(4, 2)
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        e1, e2 = c[j] - c[i], c[k] - c[i]
        cross = e1[0] * e2[1] - e1[1] * e2[0]
        if abs(cross) <= 1e-12 * max(np.linalg.norm(e1) * np.linalg.norm(e2), 1e-300):
            raise DegenerateQuad(f"corners {i}, {j}, {k} are collinear")
    h = np.column_stack((c, np.ones(4)))
    diagonal_a = np.cross(h[0], h[2])
    diagonal_b = np.cross(h[1], h[3])
    x = np.cross(diagonal_a, diagonal_b)
    if abs(x[2]) <= 1e-12 * np.linalg.norm(x):
        raise DegenerateQuad("diagonals are parallel")
    return x[:2] / x[2]


class Detection(NamedTuple):
    """One detected marker in one camera frame (corners or a center, in pixels)."""

    camera_id: int
    step_id: int
    marker_id: int
    scale_index: int
    corners: np.ndarray | None = None
    center: np.ndarray | None = None

    def point(self):
        if self.corners is not None:
            return center_from_square_corners(self.corners)
        if self.center is None:
            raise ShapeMismatch(f"detection of marker {self.marker_id} has neither corners nor center")
        return np.asarray(self.center, dtype=float).reshape(2)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Fused measurements x_{c,k}; a (camera, point) pair absent from the set has v_{c,k} = 0."""

    camera_ids: np.ndarray
    point_ids: np.ndarray
    uv: np.ndarray
    weight: np.ndarray = None

    def __post_init__(self):
        cam = np.asarray(self.camera_ids, dtype=np.int64).reshape(-1)
        pid = np.asarray(self.point_ids, dtype=np.int64).reshape(-1)
        uv = np.asarray(self.uv, dtype=float).reshape(-1, 2)
        weight = np.ones(len(cam)) if self.weight is None else np.asarray(self.weight, dtype=float).reshape(-1)
        if not (len(cam) == len(pid) == len(uv) == len(weight)):
            raise ShapeMismatch("observation arrays differ in length")
        if np.any(~((weight > 0) & (weight <= 1))):
            raise ConfigError("observation weights must lie in (0, 1]")
        order = np.lexsort((pid, cam))
        cam, pid, uv, weight = cam[order], pid[order], uv[order], weight[order]
        if len(cam) > 1 and np.any((np.diff(cam) == 0) & (np.diff(pid) == 0)):
            raise ShapeMismatch("more than one observation for a (camera, point) pair")
        for name, value in (("camera_ids", cam), ("point_ids", pid), ("uv", uv), ("weight", weight)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    def __len__(self):
        return len(self.camera_ids)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros((0, 2)))

    @classmethod
    def from_frame(cls, frame):
        if frame.empty:
            return cls.empty()
        weight = frame["weight"].to_numpy() if "weight" in frame else None
        return cls(
            frame["camera_id"].to_numpy(),
            frame["point_id"].to_numpy(),
            frame[["u", "v"]].to_numpy(),
            weight,
        )

    def frame(self):
        return pd.DataFrame(
            {
                "camera_id": self.camera_ids,
                "point_id": self.point_ids,
                "u": self.uv[:, 0],
                "v": self.uv[:, 1],
                "weight": self.weight,
            }
        )

    def cameras(self):
        return sorted(int(c) for c in np.unique(self.camera_ids))

    def points(self):
        return sorted(int(p) for p in np.unique(self.point_ids))

    def is_visible(self, camera_id, point_id):
        return bool(np.any((self.camera_ids == camera_id) & (self.point_ids == point_id)))

    def subset(self, mask):
        mask = np.asarray(mask, dtype=bool)
        return ObservationSet(self.camera_ids[mask], self.point_ids[mask], self.uv[mask], self.weight[mask])

    def for_camera(self, camera_id):
        return self.subset(self.camera_ids == camera_id)

    def tracks(self):
        """Observation indices per point id, for every observed point."""
        order = np.argsort(self.point_ids, kind="stable")
        splits = np.flatnonzero(np.diff(self.point_ids[order])) + 1
        return {int(self.point_ids[g[0]]): g for g in np.split(order, splits) if len(g)}

    def track_lengths(self):
        _, counts = np.unique(self.point_ids, return_counts=True)
        return counts


def fuse_detections(detections, schedule=None, gate_px=FUSION_GATE_PX):
    """One median observation per (camera, marker) from its per-scale detections.

    Detections farther than `gate_px` from the first median are dropped before
    the final median; a pair whose detections are all dropped stays unobserved.
    """
    rows = []
    for det in detections:
        if schedule is not None:
            step = schedule.step(det.step_id)
            if int(det.marker_id) not in step.marker_ids:
                raise UnknownStep(f"marker {det.marker_id} is not projected in step {det.step_id}")
        u, v = det.point()
        rows.append((int(det.camera_id), int(det.marker_id), u, v))
    if not rows:
        return ObservationSet.empty()

    frame = pd.DataFrame(rows, columns=["camera_id", "point_id", "u", "v"])
    fused = []
    dropped = 0
    for (camera_id, marker_id), group in frame.groupby(["camera_id", "point_id"], sort=True):
        uv = group[["u", "v"]].to_numpy()
        median = np.median(uv, axis=0)
        keep = np.linalg.norm(uv - median, axis=1) <= gate_px
        dropped += int((~keep).sum())
        if not keep.any():
            continue
        fused.append((camera_id, marker_id, *np.median(uv[keep], axis=0)))
    logger.info(
        "fused %d detections into %d observations (%d inconsistent dropped)",
        len(frame),
        len(fused),
        dropped,
    )
    if not fused:
        return ObservationSet.empty()
    out = pd.DataFrame(fused, columns=["camera_id", "point_id", "u", "v"])
    return ObservationSet.from_frame(out)
