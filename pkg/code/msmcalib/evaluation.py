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
Accuracy and robustness metrics of a calibrated rig.

Key Features:
- Umeyama similarity alignment of the estimated camera centers onto the ground
  truth, which removes the gauge of the reconstruction.
- Rotation (geodesic angle) and translation RMSE over cameras.
- Held-out reprojection: with the poses frozen, independent correspondences
  are triangulated pairwise and refined point by point, and the residuals are
  reported per camera.
- Success rates: share of cameras whose held-out error is below 0.5 / 2 / 5 px,
  unregistered cameras counting as failures.

Dependencies:
- numpy
- scipy (Rotation)
- pandas (per-camera and per-category tables)
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from .bundle import BundleProblem
from .errors import DegenerateConfiguration, IdMismatch, NoEvaluableTracks
from .geometry import CameraRig, Pose
from .solver import MAX_TRIANGULATION_RATIO, triangulate_widest_pairs

logger = logging.getLogger(__name__)

SUCCESS_THRESHOLDS = (0.5, 2.0, 5.0)


@dataclass(frozen=True, eq=False)
class Sim3Transform:
    """y = scale * R @ x + t."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if not self.scale > 0:
            raise DegenerateConfiguration(f"similarity scale must be positive, got {self.scale}")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise DegenerateConfiguration("similarity rotation is not a proper rotation")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls):
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, points):
        return self.scale * np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def apply_to_pose(self, pose):
        """World-to-camera pose expressed in the target frame (camera coordinates rescaled)."""
        R = pose.R @ self.rotation.T
        return Pose.from_matrix(R, self.scale * pose.translation - R @ self.translation)


def umeyama_align(source, target):
    """Least-squares similarity mapping `source` points onto `target` points."""
    x = np.asarray(source, dtype=float).reshape(-1, 3)
    y = np.asarray(target, dtype=float).reshape(-1, 3)
    if len(x) != len(y):
        raise DegenerateConfiguration(f"{len(x)} source points vs {len(y)} target points")
    if len(x) < 3:
        raise DegenerateConfiguration(f"alignment needs 3 point pairs, got {len(x)}")
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    s = np.linalg.svd(xc, compute_uv=False)
    if s[0] == 0.0 or s[1] <= 1e-9 * s[0]:
        raise DegenerateConfiguration("source points are collinear or coincident")

    cov = yc.T @ xc / len(x)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    var_x = np.mean(np.sum(xc**2, axis=1))
    scale = float(np.trace(np.diag(D) @ S) / var_x)
    return Sim3Transform(scale, R, my - scale * R @ mx)


def _as_poses(rig):
    if isinstance(rig, CameraRig):
        return rig.poses()
    return dict(rig)


def align_centers(estimated, ground_truth):
    est, gt = _as_poses(estimated), _as_poses(ground_truth)
    ids = sorted(est)
    return umeyama_align([est[c].center for c in ids], [gt[c].center for c in ids])


def pose_error_table(estimated, ground_truth, alignment=None):
    """Per-camera rotation error (deg) and center error after alignment."""
    est, gt = _as_poses(estimated), _as_poses(ground_truth)
    if set(est) != set(gt):
        raise IdMismatch(f"estimated cameras {sorted(est)} vs ground truth {sorted(gt)}")
    alignment = alignment or align_centers(est, gt)
    rows = []
    for c in sorted(est):
        aligned = alignment.apply_to_pose(est[c])
        angle = Rotation.from_matrix(gt[c].R @ aligned.R.T).magnitude()
        rows.append(
            {
                "camera_id": c,
                "rot_err_deg": float(np.degrees(angle)),
                "trans_err": float(np.linalg.norm(alignment.apply(est[c].center) - gt[c].center)),
            }
        )
    return pd.DataFrame(rows, columns=["camera_id", "rot_err_deg", "trans_err"])


def pose_errors(estimated, ground_truth, alignment=None):
    """Rotation RMSE (degrees) and translation RMSE (scene units) over cameras."""
    table = pose_error_table(estimated, ground_truth, alignment)
    rot = math.sqrt(float(np.mean(table["rot_err_deg"] ** 2)))
    trans = math.sqrt(float(np.mean(table["trans_err"] ** 2)))
    return rot, trans


def heldout_reprojection(recon, heldout, intrinsics=None):
    """Per-camera reprojection statistics of held-out correspondences, poses frozen."""
    intrinsics = intrinsics or recon.intrinsics
    poses = recon.camera_poses()
    registered = np.array(sorted(poses))
    tracks = []
    for pid, rows in heldout.tracks().items():
        rows = rows[np.isin(heldout.camera_ids[rows], registered)]
        if len(rows) >= 2:
            tracks.append((pid, rows))
    if not tracks:
        raise NoEvaluableTracks("no held-out track is seen by two registered cameras")

    pids, rows_list, X, ratio = triangulate_widest_pairs(poses, intrinsics, heldout, tracks)
    ok = (ratio <= MAX_TRIANGULATION_RATIO) & np.all(np.isfinite(X), axis=1)
    if not ok.any():
        raise NoEvaluableTracks("every held-out track is degenerate")
    pids = np.asarray(pids)[ok]
    rows = np.concatenate([r for r, keep in zip(rows_list, ok) if keep])
    problem = BundleProblem(
        intrinsics,
        poses,
        pids,
        X[ok],
        heldout.camera_ids[rows],
        heldout.point_ids[rows],
        heldout.uv[rows],
        fixed=tuple(poses),
    )
    result = problem.solve(max_nfev=50)
    residual = problem.residuals(result.x).reshape(-1, 2)
    cams = heldout.camera_ids[rows]
    err = np.linalg.norm(residual, axis=1)
    table = []
    for c in sorted(int(c) for c in np.unique(cams)):
        sel = cams == c
        table.append(
            {
                "camera_id": c,
                "observations": int(sel.sum()),
                "reproj_px": float(np.sqrt(np.mean(residual[sel] ** 2))),
                "mean_norm_px": float(err[sel].mean()),
                "max_px": float(err[sel].max()),
            }
        )
    logger.info(
        "held-out: %d tracks over %d cameras, RMS %.4f px",
        int(ok.sum()),
        len(table),
        float(np.sqrt(np.mean(residual**2))),
    )
    return pd.DataFrame(table, columns=["camera_id", "observations", "reproj_px", "mean_norm_px", "max_px"])


def success_rate(errors, thresholds=SUCCESS_THRESHOLDS, cameras=None):
    """Integer percentages of cameras whose error is below each threshold.

    `errors` maps camera ids to errors (or is a sequence); a missing or NaN
    error is an unregistered camera and fails every threshold.
    """
    if isinstance(errors, dict):
        ids = sorted(set(errors) | set(cameras or ()))
        values = [errors.get(c) for c in ids]
    else:
        values = list(errors)
    values = np.array([np.nan if v is None else float(v) for v in values])
    if len(values) == 0:
        return tuple(0 for _ in thresholds)
    out = []
    for threshold in thresholds:
        with np.errstate(invalid="ignore"):
            passed = int(np.sum(values < threshold))
        out.append(int(math.floor(100.0 * passed / len(values) + 0.5)))
    return tuple(out)


@dataclass(eq=False)
class EvaluationReport:
    rot_rmse_deg: float
    trans_rmse: float
    trans_rmse_relative: float  # percent of the mean inter-camera distance
    reproj_px: float
    max_reproj_px: float
    success: dict
    cameras: pd.DataFrame
    categories: pd.DataFrame
    point_error_mean: float = float("nan")
    point_error_std: float = float("nan")
    heldout: pd.DataFrame | None = None
    extra: dict = field(default_factory=dict)

    def summary(self):
        data = {
            "rot_rmse_deg": self.rot_rmse_deg,
            "trans_rmse": self.trans_rmse,
            "trans_rmse_relative_pct": self.trans_rmse_relative,
            "reproj_px": self.reproj_px,
            "max_reproj_px": self.max_reproj_px,
            "point_error_mean": self.point_error_mean,
            "point_error_std": self.point_error_std,
        }
        data.update({f"success_{t:g}px": v for t, v in self.success.items()})
        return data

    def to_dict(self):
        def clean(value):
            return None if isinstance(value, float) and math.isnan(value) else value

        return {
            "summary": {k: clean(v) for k, v in self.summary().items()},
            "cameras": [{k: clean(v) for k, v in row.items()} for row in self.cameras.to_dict("records")],
            "categories": [{k: clean(v) for k, v in row.items()} for row in self.categories.to_dict("records")],
        }


def mean_intercamera_distance(rig):
    centers = np.array([p.center for p in _as_poses(rig).values()])
    if len(centers) < 2:
        return float("nan")
    d = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
    return float(d[np.triu_indices(len(centers), 1)].mean())


def evaluate(recon, ground_truth, categories=None, heldout=None, true_points=None, thresholds=SUCCESS_THRESHOLDS):
    """Full report of a reconstruction against a ground-truth rig.

    `true_points` maps point ids to ground-truth positions. Success rates use
    the held-out errors when a held-out set is given, the calibration residuals
    otherwise.
    """
    gt = _as_poses(ground_truth)
    if categories is None and isinstance(ground_truth, CameraRig):
        categories = ground_truth.categories()
    categories = categories or {}
    est = recon.camera_poses()
    unknown = set(est) - set(gt)
    if unknown:
        raise IdMismatch(f"reconstructed cameras {sorted(unknown)} have no ground truth")
    truth = {c: gt[c] for c in est}
    alignment = align_centers(est, truth)
    errors = pose_error_table(est, truth, alignment)
    rot = math.sqrt(float(np.mean(errors["rot_err_deg"] ** 2)))
    trans = math.sqrt(float(np.mean(errors["trans_err"] ** 2)))
    spread = mean_intercamera_distance(truth)

    table = recon.camera_table()
    table = table.merge(errors, on="camera_id", how="left")
    table.insert(1, "category", [categories.get(c, "") for c in table["camera_id"]])
    for c in gt:
        if c not in set(table["camera_id"]):
            logger.warning("camera %d has ground truth but no calibration data", c)

    heldout_table = None
    if heldout is not None:
        heldout_table = heldout_reprojection(recon, heldout)
        table = table.merge(
            heldout_table[["camera_id", "reproj_px"]].rename(columns={"reproj_px": "heldout_px"}),
            on="camera_id",
            how="left",
        )
        metric = dict(zip(table["camera_id"], table["heldout_px"]))
    else:
        metric = {c: (v if r else np.nan) for c, v, r in zip(table["camera_id"], table["rms_px"], table["registered"])}
    success = dict(zip(thresholds, success_rate(metric, thresholds, cameras=list(gt))))

    point_mean = point_std = float("nan")
    if true_points is not None and recon.points:
        ids, xyz = recon.point_array()
        known = [i for i, p in enumerate(ids) if int(p) in true_points]
        if known:
            aligned = alignment.apply(xyz[known])
            target = np.array([true_points[int(ids[i])] for i in known])
            dist = np.linalg.norm(aligned - target, axis=1)
            point_mean, point_std = float(dist.mean()), float(dist.std())

    per_category = (
        table[table["registered"]]
        .groupby("category", sort=True)
        .agg(
            cameras=("camera_id", "count"),
            rms_px=("rms_px", "mean"),
            view_score=("view_score", "mean"),
            observations=("observations", "mean"),
        )
        .reset_index()
    )

    rows, residual = recon.inlier_rows()
    overall = float(np.sqrt(np.mean(residual**2))) if len(residual) else float("nan")
    largest = float(np.linalg.norm(residual, axis=1).max()) if len(residual) else float("nan")
    return EvaluationReport(
        rot_rmse_deg=rot,
        trans_rmse=trans,
        trans_rmse_relative=100.0 * trans / spread if spread > 0 else float("nan"),
        reproj_px=overall,
        max_reproj_px=largest,
        success=success,
        cameras=table,
        categories=per_category,
        point_error_mean=point_mean,
        point_error_std=point_std,
        heldout=heldout_table,
    )
