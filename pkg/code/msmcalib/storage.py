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
Reading and writing of run artifacts.

Formats:
- Scene JSON: cameras (id, fx, fy, cx, cy, w, h, qw, qx, qy, qz, tx, ty, tz,
  category), points (id, X, Y, Z), observations (camera_id, point_id, u, v)
  and, optionally, the held-out points and observations.
- Schedule JSON: one record per projected marker and step.
- Detections: JSON lines, one detection per line, with either `corners`
  ([[u, v] x 4]) or `center` ([u, v]).
- Reconstruction JSON: poses, points, per-camera statistics, gauge.
- Tables (Monte-Carlo report, evaluation): CSV or XLSX, chosen by extension.

Every JSON artifact carries a `run` block {version, seed, config}; tables get
the same block as a `<file>.run.json` sidecar. JSON is written with sorted keys
so that equal inputs give byte-identical files.

Dependencies:
- numpy
- pandas (JSON lines, CSV and Excel tables)
- openpyxl (Excel writer used by pandas)
"""
from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import ShapeMismatch
from .geometry import Camera, CameraIntrinsics, CameraRig, Pose
from .msm import Detection, ObservationSet, ProjectionSchedule
from .simulator import ScenePoints
from .solver import Reconstruction

logger = logging.getLogger(__name__)


def run_block(config=None, seed=None):
    return {"version": __version__, "seed": seed, "config": config or {}}


def _default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not serializable: {type(value).__name__}")


def _finite(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(path, data):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True, default=_default)
        f.write("\n")
    logger.info("wrote %s", path)


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


# cameras


def camera_record(camera):
    intr, pose = camera.intrinsics, camera.pose
    qw, qx, qy, qz = pose.quaternion
    tx, ty, tz = pose.translation
    return {
        "id": int(camera.camera_id),
        "fx": intr.fx,
        "fy": intr.fy,
        "cx": intr.cx,
        "cy": intr.cy,
        "w": intr.width,
        "h": intr.height,
        "qw": qw,
        "qx": qx,
        "qy": qy,
        "qz": qz,
        "tx": tx,
        "ty": ty,
        "tz": tz,
        "category": camera.category,
    }


def camera_from_record(record):
    intr = CameraIntrinsics(
        float(record["fx"]),
        float(record["fy"]),
        float(record["cx"]),
        float(record["cy"]),
        int(record["w"]),
        int(record["h"]),
    )
    pose = Pose(
        np.array([record["qw"], record["qx"], record["qy"], record["qz"]], dtype=float),
        np.array([record["tx"], record["ty"], record["tz"]], dtype=float),
    )
    return Camera(int(record["id"]), intr, pose, record.get("category", "far"))


def rig_records(rig):
    return [camera_record(c) for c in rig]


def rig_from_records(records):
    return CameraRig(tuple(camera_from_record(r) for r in records))


# observations and points


def observation_records(observations):
    return [
        {"camera_id": int(c), "point_id": int(p), "u": float(uv[0]), "v": float(uv[1])}
        for c, p, uv in zip(observations.camera_ids, observations.point_ids, observations.uv)
    ]


def observations_from_records(records):
    if not records:
        return ObservationSet.empty()
    return ObservationSet.from_frame(pd.DataFrame(records))


def point_records(points):
    return [
        {"id": int(p), "X": float(x[0]), "Y": float(x[1]), "Z": float(x[2])}
        for p, x in zip(points.point_ids, points.xyz)
    ]


def points_from_records(records):
    ids = np.array([r["id"] for r in records], dtype=np.int64)
    xyz = np.array([[r["X"], r["Y"], r["Z"]] for r in records], dtype=float).reshape(-1, 3)
    normals = np.tile([0.0, 0.0, 1.0], (len(ids), 1))
    return ScenePoints(ids, xyz, normals, np.full(len(ids), -1))


# scenes


def scene_to_dict(scene, config=None):
    data = {
        "run": run_block(config, scene.seed),
        "scenario": scene.config.scenario.value,
        "sigma": scene.sigma,
        "cameras": rig_records(scene.rig),
        "points": point_records(scene.points),
        "observations": observation_records(scene.observations),
    }
    if scene.heldout is not None:
        data["heldout_points"] = point_records(scene.heldout_points)
        data["heldout"] = observation_records(scene.heldout)
    return data


def write_scene(path, scene, config=None):
    write_json(path, scene_to_dict(scene, config))


class LoadedScene:
    """Scene read back from JSON: ground-truth rig, points and observation sets."""

    def __init__(self, data):
        self.data = data
        self.rig = rig_from_records(data["cameras"])
        self.points = points_from_records(data.get("points", []))
        self.observations = observations_from_records(data.get("observations", []))
        self.heldout = observations_from_records(data["heldout"]) if "heldout" in data else None
        self.sigma = data.get("sigma")
        self.seed = data.get("run", {}).get("seed")

    def true_points(self):
        return {int(p): x for p, x in zip(self.points.point_ids, self.points.xyz)}


def read_scene(path):
    return LoadedScene(read_json(path))


# schedules and detections


def write_schedule(path, schedule, config=None, seed=None):
    data = schedule.to_dict()
    data["run"] = run_block(config, seed)
    data["step_count"] = len(schedule)
    data["marker_count"] = len(schedule.marker_centers())
    data["duration_s"] = schedule.duration
    write_json(path, data)


def read_schedule(path):
    return ProjectionSchedule.from_dict(read_json(path))


def write_detections(path, detections):
    rows = []
    for det in detections:
        row = {
            "camera_id": int(det.camera_id),
            "step_id": int(det.step_id),
            "marker_id": int(det.marker_id),
            "scale_index": int(det.scale_index),
        }
        if det.corners is not None:
            row["corners"] = np.asarray(det.corners, dtype=float).tolist()
        else:
            row["center"] = np.asarray(det.center, dtype=float).tolist()
        rows.append(row)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_json(path, orient="records", lines=True, double_precision=15)
    logger.info("wrote %d detections to %s", len(rows), path)


def read_detections(path):
    frame = pd.read_json(path, lines=True, dtype=False)
    required = {"camera_id", "step_id", "marker_id", "scale_index"}
    missing = required - set(frame.columns)
    if missing:
        raise ShapeMismatch(f"{path}: detection records lack {sorted(missing)}")
    detections = []
    for row in frame.to_dict("records"):
        corners = row.get("corners")
        center = row.get("center")
        corners = np.asarray(corners, dtype=float) if isinstance(corners, list) else None
        center = np.asarray(center, dtype=float) if isinstance(center, list) else None
        if corners is None and center is None:
            raise ShapeMismatch(f"{path}: detection of marker {row['marker_id']} has no corners or center")
        detections.append(
            Detection(
                int(row["camera_id"]),
                int(row["step_id"]),
                int(row["marker_id"]),
                int(row["scale_index"]),
                corners,
                center,
            )
        )
    logger.info("read %d detections from %s", len(detections), path)
    return detections


# reconstructions


def reconstruction_to_dict(recon, config=None, seed=None):
    table = recon.camera_table()
    stats = {int(r["camera_id"]): r for r in table.to_dict("records")}
    cameras = []
    for c in sorted(recon.intrinsics):
        row = stats[c]
        record = {
            "id": int(c),
            "registered": bool(row["registered"]),
            "order": int(row["order"]),
            "observations": int(row["observations"]),
            "view_score": int(row["view_score"]),
            "rms_px": _finite(float(row["rms_px"])),
            "max_px": _finite(float(row["max_px"])),
            "pnp_inliers": int(row["pnp_inliers"]),
        }
        if c in recon.poses:
            pose = recon.poses[c]
            record.update(zip(("qw", "qx", "qy", "qz"), pose.quaternion.tolist()))
            record.update(zip(("tx", "ty", "tz"), pose.translation.tolist()))
        cameras.append(record)
    ids, xyz = recon.point_array()
    data = {
        "run": run_block(config, seed),
        "gauge": {"reference": recon.reference, "baseline": recon.baseline, "baseline_length": 1.0},
        "cameras": cameras,
        "points": [{"id": int(p), "X": x[0], "Y": x[1], "Z": x[2]} for p, x in zip(ids, xyz.tolist())],
        "reprojection_rms_px": _finite(recon.reprojection_rms()),
        "unregistered": recon.unregistered(),
    }
    if recon.plane is not None:
        data["plane"] = {"normal": recon.plane.normal.tolist(), "offset": float(recon.plane.offset)}
    return data


def write_reconstruction(path, recon, config=None, seed=None):
    write_json(path, reconstruction_to_dict(recon, config, seed))


def poses_from_reconstruction(data):
    """Registered poses of a reconstruction JSON, keyed by camera id."""
    poses = {}
    for record in data["cameras"]:
        if record.get("registered"):
            poses[int(record["id"])] = Pose(
                np.array([record["qw"], record["qx"], record["qy"], record["qz"]], dtype=float),
                np.array([record["tx"], record["ty"], record["tz"]], dtype=float),
            )
    return poses


def reconstruction_from_dict(data, observations, intrinsics, max_error=4.0):
    """Rebuild a frozen Reconstruction from its JSON and the observations it was solved on."""
    gauge = data.get("gauge", {})
    recon = Reconstruction(
        observations,
        dict(intrinsics),
        reference=gauge.get("reference"),
        baseline=gauge.get("baseline"),
        max_error=max_error,
    )
    poses = poses_from_reconstruction(data)
    records = {int(r["id"]): r for r in data["cameras"]}
    for c in sorted(poses, key=lambda c: records[c].get("order", 0)):
        inliers = records[c].get("pnp_inliers", -1)
        recon.add_camera(c, poses[c], inliers=inliers if inliers >= 0 else None)
    for p in data.get("points", []):
        recon.set_point(p["id"], [p["X"], p["Y"], p["Z"]])
    return recon.freeze()


# tables


def write_table(path, frame, config=None, seed=None):
    """CSV or XLSX by extension, plus a `<path>.run.json` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".xlsx":
        frame.to_excel(path, index=False, engine="openpyxl")
    else:
        frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
    write_json(path.with_name(path.name + ".run.json"), run_block(config, seed))
    logger.info("wrote %d rows to %s", len(frame), path)
