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
Camera model, pose algebra and the minimal geometric solvers used by the
calibration pipeline.

Key Features:
- Pinhole projection through known intrinsics. Observations are undistorted
  pixels, so there is no lens distortion anywhere in the model.
- Poses are stored as a unit quaternion (w, x, y, z) plus a translation and map
  world coordinates into the camera frame.
- Two-view DLT triangulation, batched over any number of tracks.
- RANSAC homography estimation on normalized correspondences with an inlier
  threshold expressed in pixels.
- Analytic homography decomposition (OpenCV) with cheirality-based selection.
- RANSAC PnP with a 6-point DLT sample, or a plane-to-image homography sample
  when the scene points are coplanar, refined by Levenberg-Marquardt.

Point sets are plain float arrays: pixels and normalized image points are
(N, 2) rows, scene points are (N, 3) rows.

Dependencies:
- numpy
- scipy (least_squares, Rotation)
- opencv (decomposeHomographyMat)
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import cv2
import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .errors import (
    AmbiguousDecomposition,
    ConfigError,
    DegenerateGeometry,
    InsufficientMatches,
    NoConsensus,
    NonPositiveDepth,
)

logger = logging.getLogger(__name__)

DEPTH_EPS = 1e-12
RANSAC_CONFIDENCE = 0.9999
RANSAC_MAX_ITERATIONS = 10_000
HOMOGRAPHY_MIN_INLIERS = 12
PNP_MIN_POINTS = 6
# smallest/largest singular value of centred scene points below which PnP
# switches to the planar minimal solver
PLANAR_RATIO = 0.02


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics K_c of one camera, in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError(f"focal lengths must be positive: fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ConfigError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    @classmethod
    def from_focal(cls, focal, width=1920, height=1080):
        return cls(focal, focal, width / 2.0, height / 2.0, width, height)

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def mean_focal(self):
        return 0.5 * (self.fx + self.fy)

    def to_normalized(self, uv):
        uv = np.asarray(uv, dtype=float)
        return np.stack(((uv[..., 0] - self.cx) / self.fx, (uv[..., 1] - self.cy) / self.fy), axis=-1)

    def to_pixels(self, xy):
        xy = np.asarray(xy, dtype=float)
        return np.stack((xy[..., 0] * self.fx + self.cx, xy[..., 1] * self.fy + self.cy), axis=-1)

    def contains(self, uv):
        uv = np.asarray(uv, dtype=float)
        return (uv[..., 0] >= 0) & (uv[..., 0] < self.width) & (uv[..., 1] >= 0) & (uv[..., 1] < self.height)


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera rigid motion P_c: x_cam = R @ X + t."""

    quaternion: np.ndarray  # (w, x, y, z), unit norm, w >= 0
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        norm = np.linalg.norm(q)
        if not np.isfinite(norm) or norm == 0.0:
            raise ConfigError("pose quaternion must be finite and non-zero")
        q = q / norm
        if q[0] < 0:
            q = -q
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_rotation(cls, rotation, translation):
        x, y, z, w = rotation.as_quat()
        return cls(np.array([w, x, y, z]), translation)

    @classmethod
    def from_matrix(cls, R, t):
        return cls.from_rotation(Rotation.from_matrix(np.asarray(R, dtype=float)), t)

    @classmethod
    def from_rotvec(cls, rotvec, t):
        return cls.from_rotation(Rotation.from_rotvec(np.asarray(rotvec, dtype=float)), t)

    @property
    def rotation(self):
        w, x, y, z = self.quaternion
        return Rotation.from_quat([x, y, z, w])

    @cached_property
    def R(self):
        return self.rotation.as_matrix()

    @property
    def rotvec(self):
        return self.rotation.as_rotvec()

    @property
    def matrix(self):
        return np.hstack((self.R, self.translation[:, None]))

    @property
    def center(self):
        return -self.R.T @ self.translation

    def transform(self, points):
        return np.asarray(points, dtype=float) @ self.R.T + self.translation

    def compose(self, other):
        # apply `other` first, then self
        return Pose.from_matrix(self.R @ other.R, self.R @ other.translation + self.translation)

    def inverse(self):
        return Pose.from_matrix(self.R.T, -self.R.T @ self.translation)

    def __repr__(self):
        q = np.array2string(self.quaternion, precision=6)
        t = np.array2string(self.translation, precision=6)
        return f"Pose(q={q}, t={t})"


def look_at(center, target, up=(0.0, 0.0, 1.0)):
    """Pose of a camera at `center` whose optical axis passes through `target`.

    The image x axis is kept horizontal (zero roll); image y points down.
    """
    center = np.asarray(center, dtype=float)
    forward = np.asarray(target, dtype=float) - center
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=float))
    if np.linalg.norm(right) < 1e-12:
        raise DegenerateGeometry("optical axis is parallel to the up vector")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.vstack((right, down, forward))
    return Pose.from_matrix(R, -R @ center)


@dataclass(frozen=True)
class Camera:
    camera_id: int
    intrinsics: CameraIntrinsics
    pose: Pose
    category: str = "far"


@dataclass(frozen=True)
class CameraRig:
    """Ordered set of cameras (intrinsics K_c and poses P_c), keyed by id."""

    cameras: tuple

    def __post_init__(self):
        cameras = tuple(sorted(self.cameras, key=lambda c: c.camera_id))
        ids = [c.camera_id for c in cameras]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate camera ids in rig: {ids}")
        object.__setattr__(self, "cameras", cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __len__(self):
        return len(self.cameras)

    def __getitem__(self, camera_id):
        for camera in self.cameras:
            if camera.camera_id == camera_id:
                return camera
        raise KeyError(camera_id)

    @property
    def ids(self):
        return [c.camera_id for c in self.cameras]

    def intrinsics(self):
        return {c.camera_id: c.intrinsics for c in self.cameras}

    def poses(self):
        return {c.camera_id: c.pose for c in self.cameras}

    def categories(self):
        return {c.camera_id: c.category for c in self.cameras}


@dataclass(frozen=True, eq=False)
class Homography:
    """Plane-to-plane homography, stored as its canonical representative."""

    matrix: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float).reshape(3, 3)
        norm = np.linalg.norm(M)
        if not np.isfinite(norm) or norm == 0.0:
            raise DegenerateGeometry("homography must be finite and non-zero")
        M = M / norm
        if abs(np.linalg.det(M)) < 1e-15:
            raise DegenerateGeometry("singular homography")
        if M.flat[np.argmax(np.abs(M))] < 0:
            M = -M
        object.__setattr__(self, "matrix", M)

    def apply(self, points):
        return apply_homography(self.matrix, points)

    def inverse(self):
        return Homography(np.linalg.inv(self.matrix))


def homogeneous(points):
    points = np.asarray(points, dtype=float)
    return np.concatenate((points, np.ones(points.shape[:-1] + (1,))), axis=-1)


def apply_homography(M, points):
    p = homogeneous(points) @ np.asarray(M).T
    with np.errstate(divide="ignore", invalid="ignore"):
        return p[..., :2] / p[..., 2:3]


def skew(v):
    """Cross-product matrices of (..., 3) vectors."""
    v = np.asarray(v, dtype=float)
    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1] = -v[..., 2]
    S[..., 0, 2] = v[..., 1]
    S[..., 1, 0] = v[..., 2]
    S[..., 1, 2] = -v[..., 0]
    S[..., 2, 0] = -v[..., 1]
    S[..., 2, 1] = v[..., 0]
    return S


def so3_left_jacobian(phi):
    """Left Jacobian of SO(3) for (..., 3) rotation vectors.

    d(Exp(phi) @ y)/d(phi) = -skew(Exp(phi) @ y) @ so3_left_jacobian(phi)
    """
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)[..., None, None]
    S = skew(phi)
    S2 = S @ S
    small = theta < 1e-6
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    b = np.where(small, 1.0 / 6.0 - theta**2 / 120.0, (safe - np.sin(safe)) / safe**3)
    return np.eye(3) + a * S + b * S2


# Projection


def project_with_depth(intrinsics, pose, points):
    """Pixels and camera-frame depths of scene points, without cheirality checks."""
    Xc = pose.transform(points)
    z = Xc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = intrinsics.to_pixels(Xc[..., :2] / z[..., None])
    return uv, z


def project(intrinsics, pose, point):
    """Perspective projection pi(K_c, P_c, X_k) of one or many scene points."""
    X = np.asarray(point, dtype=float)
    uv, z = project_with_depth(intrinsics, pose, np.atleast_2d(X))
    if np.any(~(z > DEPTH_EPS)):
        raise NonPositiveDepth(f"point behind camera (z_cam = {float(np.min(z)):.3g})")
    return uv[0] if X.ndim == 1 else uv


def backproject(intrinsics, pose, uv, depth):
    """Scene point at camera-frame depth `depth` along the ray through pixel `uv`."""
    xy = intrinsics.to_normalized(uv)
    depth = np.asarray(depth, dtype=float)
    Xc = np.concatenate((xy * depth[..., None], depth[..., None]), axis=-1)
    return (Xc - pose.translation) @ pose.R


def reprojection_errors(intrinsics, pose, points3d, points2d):
    """Pixel distance per correspondence; infinite for points behind the camera."""
    uv, z = project_with_depth(intrinsics, pose, points3d)
    err = np.linalg.norm(uv - np.asarray(points2d, dtype=float), axis=-1)
    return np.where(z > DEPTH_EPS, err, np.inf)


# Triangulation


def triangulate_points(pose_a, pose_b, xa, xb):
    """Batched homogeneous DLT triangulation from normalized image points.

    Returns the (N, 3) points and, per point, the ratio of the two smallest
    singular values of the linear system (close to 1 for parallel rays).
    """
    xa = np.asarray(xa, dtype=float).reshape(-1, 2)
    xb = np.asarray(xb, dtype=float).reshape(-1, 2)
    Pa, Pb = pose_a.matrix, pose_b.matrix
    A = np.empty((len(xa), 4, 4))
    A[:, 0] = xa[:, 0, None] * Pa[2] - Pa[0]
    A[:, 1] = xa[:, 1, None] * Pa[2] - Pa[1]
    A[:, 2] = xb[:, 0, None] * Pb[2] - Pb[0]
    A[:, 3] = xb[:, 1, None] * Pb[2] - Pb[1]
    A /= np.linalg.norm(A, axis=2, keepdims=True)
    _, s, vt = np.linalg.svd(A)
    Xh = vt[:, -1, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        X = Xh[:, :3] / Xh[:, 3:4]
        ratio = np.where(s[:, 2] > 0, s[:, 3] / s[:, 2], 1.0)
    return X, ratio


def triangulate_two_view(cam_a, cam_b, xa, xb):
    """DLT triangulation of one track seen by two (intrinsics, pose) cameras.

    The result is sign-agnostic: a point behind a camera is still returned and
    the caller applies the cheirality filter.
    """
    (intr_a, pose_a), (intr_b, pose_b) = cam_a, cam_b
    if np.linalg.norm(pose_a.center - pose_b.center) <= 1e-9:
        raise DegenerateGeometry("zero baseline between the two views")
    X, ratio = triangulate_points(
        pose_a, pose_b, intr_a.to_normalized(xa)[None], intr_b.to_normalized(xb)[None]
    )
    if not ratio[0] <= 0.99 or not np.all(np.isfinite(X[0])):
        raise DegenerateGeometry(f"near-parallel rays (singular value ratio {ratio[0]:.3f})")
    return X[0]


# Homography estimation


def _hartley_normalization(points):
    points = np.asarray(points, dtype=float)
    dim = points.shape[1]
    centroid = points.mean(axis=0)
    mean_dist = np.linalg.norm(points - centroid, axis=1).mean()
    if mean_dist == 0.0:
        raise DegenerateGeometry("coincident points")
    scale = math.sqrt(dim) / mean_dist
    T = np.eye(dim + 1)
    T[:dim, :dim] *= scale
    T[:dim, dim] = -scale * centroid
    return (points - centroid) * scale, T


def fit_homography_dlt(xa, xb):
    """Normalized DLT homography mapping xa onto xb (raw 3x3 matrix)."""
    an, Ta = _hartley_normalization(xa)
    bn, Tb = _hartley_normalization(xb)
    x, y = an[:, 0], an[:, 1]
    u, v = bn[:, 0], bn[:, 1]
    zeros, ones = np.zeros_like(x), np.ones_like(x)
    A = np.empty((2 * len(x), 9))
    A[0::2] = np.column_stack((-x, -y, -ones, zeros, zeros, zeros, u * x, u * y, u))
    A[1::2] = np.column_stack((zeros, zeros, zeros, -x, -y, -ones, v * x, v * y, v))
    _, _, vt = np.linalg.svd(A)
    return np.linalg.inv(Tb) @ vt[-1].reshape(3, 3) @ Ta


def _has_collinear_triplet(points, tol=1e-6):
    p = np.asarray(points, dtype=float)
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        e1, e2 = p[j] - p[i], p[k] - p[i]
        cross = e1[0] * e2[1] - e1[1] * e2[0]
        if abs(cross) <= tol * np.linalg.norm(e1) * np.linalg.norm(e2):
            return True
    return False


def _is_collinear(points, tol=1e-9):
    centred = np.asarray(points, dtype=float) - np.mean(points, axis=0)
    s = np.linalg.svd(centred, compute_uv=False)
    return s[0] == 0.0 or s[1] <= tol * s[0]


def _transfer_errors(M, xa, xb, focal_a, focal_b):
    # larger of the forward and backward transfer errors, in pixels
    err_b = np.linalg.norm(apply_homography(M, xa) - xb, axis=1) * focal_b
    err_a = np.linalg.norm(apply_homography(np.linalg.inv(M), xb) - xa, axis=1) * focal_a
    err = np.maximum(err_a, err_b)
    return np.where(np.isfinite(err), err, np.inf)


def ransac_iterations(inlier_ratio, sample_size, confidence=RANSAC_CONFIDENCE, cap=RANSAC_MAX_ITERATIONS):
    if inlier_ratio >= 1.0:
        return 1
    p_good = inlier_ratio**sample_size
    if p_good <= 0.0:
        return cap
    denom = math.log1p(-p_good)
    if denom == 0.0:
        return cap
    return int(min(cap, max(1, math.ceil(math.log(1.0 - confidence) / denom))))


def estimate_homography_ransac(
    xa,
    xb,
    focal_a,
    focal_b,
    threshold_px=3.0,
    seed=0,
    confidence=RANSAC_CONFIDENCE,
    max_iterations=RANSAC_MAX_ITERATIONS,
):
    """RANSAC homography between normalized correspondences xa -> xb.

    A match is an inlier when both transfer errors, scaled to pixels with the
    mean focal length of their camera, are below `threshold_px`.
    """
    xa = np.asarray(xa, dtype=float).reshape(-1, 2)
    xb = np.asarray(xb, dtype=float).reshape(-1, 2)
    n = len(xa)
    if n < 4:
        raise InsufficientMatches(f"homography needs 4 matches, got {n}")
    if _is_collinear(xa) or _is_collinear(xb):
        raise NoConsensus("all matches are collinear")

    rng = np.random.default_rng(seed)
    best_count, best_score, best_mask = 0, np.inf, None
    required = max_iterations
    iteration = 0
    while iteration < min(required, max_iterations):
        iteration += 1
        sample = rng.choice(n, 4, replace=False)
        if _has_collinear_triplet(xa[sample]) or _has_collinear_triplet(xb[sample]):
            continue
        M = fit_homography_dlt(xa[sample], xb[sample])
        if not np.all(np.isfinite(M)) or abs(np.linalg.det(M / np.linalg.norm(M))) < 1e-12:
            continue
        err = _transfer_errors(M, xa, xb, focal_a, focal_b)
        mask = err < threshold_px
        count = int(mask.sum())
        score = float(np.minimum(err, threshold_px).sum())
        if count > best_count or (count == best_count and count > 0 and score < best_score):
            best_count, best_score, best_mask = count, score, mask
            required = ransac_iterations(count / n, 4, confidence, max_iterations)
    logger.debug("homography RANSAC: %d iterations, %d/%d inliers", iteration, best_count, n)
    if best_count < HOMOGRAPHY_MIN_INLIERS:
        raise NoConsensus(f"best homography has {best_count} inliers (< {HOMOGRAPHY_MIN_INLIERS})")

    M = fit_homography_dlt(xa[best_mask], xb[best_mask])
    mask = _transfer_errors(M, xa, xb, focal_a, focal_b) < threshold_px
    if mask.sum() < HOMOGRAPHY_MIN_INLIERS:
        raise NoConsensus("refitted homography lost its consensus set")
    return Homography(M), mask


# Homography decomposition


class MotionCandidate(NamedTuple):
    pose: Pose  # camera B relative to camera A, unit translation
    normal: np.ndarray  # plane normal in camera A, n . X = d > 0
    positive: int  # matches in front of both cameras
    plane_side: int  # triangulated matches on the positive side of the plane


def homography_motion_candidates(H, xa, xb):
    """All (R, t, n) factorizations of a calibrated homography, best first."""
    M = H.matrix if isinstance(H, Homography) else np.asarray(H, dtype=float)
    xa = np.asarray(xa, dtype=float).reshape(-1, 2)
    xb = np.asarray(xb, dtype=float).reshape(-1, 2)
    # the true scale maps every match to a positive third coordinate
    if np.median((homogeneous(xa) @ M.T)[:, 2]) < 0:
        M = -M
    sv = np.linalg.svd(M, compute_uv=False)
    M = M / sv[1]
    if (sv[0] - sv[2]) / sv[1] <= 1e-9:
        raise AmbiguousDecomposition("homography is a pure rotation; translation is unobservable")

    _, rotations, translations, normals = cv2.decomposeHomographyMat(M, np.eye(3))
    candidates = []
    for R, t, n in zip(rotations, translations, normals):
        t, n = t.ravel(), n.ravel()
        norm = np.linalg.norm(t)
        if norm < 1e-12:
            continue
        pose_b = Pose.from_matrix(R, t / norm)
        X, _ = triangulate_points(Pose.identity(), pose_b, xa, xb)
        finite = np.all(np.isfinite(X), axis=1)
        za = np.where(finite, X[:, 2], -1.0)
        zb = np.where(finite, pose_b.transform(np.where(finite[:, None], X, 0.0))[:, 2], -1.0)
        positive = int(np.sum((za > 0) & (zb > 0)))
        plane_side = int(np.sum(finite & (np.where(finite[:, None], X, 0.0) @ n > 0)))
        candidates.append(MotionCandidate(pose_b, n / np.linalg.norm(n), positive, plane_side))
    candidates.sort(key=lambda c: (c.positive, c.plane_side), reverse=True)
    return candidates


def decompose_homography(H, xa, xb):
    """Relative motion (unit translation) and plane normal from an inlier homography."""
    xa = np.asarray(xa, dtype=float).reshape(-1, 2)
    if len(xa) < 4:
        raise InsufficientMatches(f"decomposition needs 4 inliers, got {len(xa)}")
    candidates = homography_motion_candidates(H, xa, xb)
    if not candidates or candidates[0].positive == 0:
        raise AmbiguousDecomposition("no decomposition places the inliers in front of both cameras")
    best = candidates[0]
    # Low-parallax floor pairs often front every match under two factorizations;
    # about a quarter of random two-view floor layouts stop here, and the
    # solver resolves them from off-plane matches or moves to the next pair.
    if len(candidates) > 1 and best.positive - candidates[1].positive < 0.05 * len(xa):
        raise AmbiguousDecomposition(
            f"two decompositions are equally plausible ({best.positive} vs {candidates[1].positive} points)"
        )
    return best.pose, best.normal


# PnP


class PlaneFrame(NamedTuple):
    origin: np.ndarray
    axes: np.ndarray  # rows: in-plane a, in-plane b, normal a x b
    flatness: float  # smallest / largest singular value of the centred points


def plane_frame(points):
    points = np.asarray(points, dtype=float)
    origin = points.mean(axis=0)
    _, s, vt = np.linalg.svd(points - origin, full_matrices=False)
    a, b = vt[0], vt[1]
    axes = np.vstack((a, b, np.cross(a, b)))
    flatness = s[2] / s[0] if len(s) > 2 and s[0] > 0 else 0.0
    return PlaneFrame(origin, axes, float(flatness))


def _pose_from_dlt(X, x):
    # 6-point (or more) DLT of the 3x4 matrix [R|t] from normalized points
    Xn, T3 = _hartley_normalization(X)
    xn, T2 = _hartley_normalization(x)
    Xh = homogeneous(Xn)
    A = np.zeros((2 * len(X), 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xn[:, 0:1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -xn[:, 1:2] * Xh
    _, _, vt = np.linalg.svd(A)
    P = np.linalg.inv(T2) @ vt[-1].reshape(3, 4) @ T3
    if np.linalg.det(P[:, :3]) < 0:
        P = -P
    U, s, Vt = np.linalg.svd(P[:, :3])
    if s[2] <= 1e-12 * s[0]:
        return None
    return Pose.from_matrix(U @ Vt, P[:, 3] / s.mean())


def _pose_from_plane(X, x, frame):
    # plane coordinates -> normalized image homography, split into [r1 r2 t]
    uv = (X - frame.origin) @ frame.axes[:2].T
    H = fit_homography_dlt(uv, x)
    h1, h2, h3 = H[:, 0], H[:, 1], H[:, 2]
    lam = 2.0 / (np.linalg.norm(h1) + np.linalg.norm(h2))
    if lam * h3[2] < 0:
        lam = -lam
    r1, r2 = lam * h1, lam * h2
    U, _, Vt = np.linalg.svd(np.column_stack((r1, r2, np.cross(r1, r2))))
    Rp = U @ Vt
    if np.linalg.det(Rp) < 0:
        return None
    R = Rp @ frame.axes
    return Pose.from_matrix(R, lam * h3 - R @ frame.origin)


class PoseRefinement(NamedTuple):
    pose: Pose
    rms_px: float
    std_rotation_deg: float
    std_translation: float


def _standard_errors(result, n_params):
    # covariance of the parameters from the Jacobian, scaled by the residual variance
    dof = max(result.fun.size - n_params, 1)
    sigma2 = 2.0 * result.cost / dof
    try:
        cov = np.linalg.inv(result.jac.T @ result.jac) * sigma2
        return np.sqrt(np.abs(np.diag(cov)))
    except np.linalg.LinAlgError as e:
        logger.debug("pose covariance unavailable: %s", e)
        return np.full(n_params, np.nan)


def refine_pose(points3d, points2d, intrinsics, pose):
    """Levenberg-Marquardt refinement of one pose on 2D-3D correspondences."""
    X = np.asarray(points3d, dtype=float)
    uv = np.asarray(points2d, dtype=float)

    def residuals(params):
        Xc = Rotation.from_rotvec(params[:3]).apply(X) + params[3:]
        z = np.where(Xc[:, 2] > DEPTH_EPS, Xc[:, 2], DEPTH_EPS)
        return (intrinsics.to_pixels(Xc[:, :2] / z[:, None]) - uv).ravel()

    x0 = np.concatenate((pose.rotvec, pose.translation))
    result = least_squares(residuals, x0, method="lm", xtol=1e-12, ftol=1e-12, gtol=1e-12)
    refined = Pose.from_rotvec(result.x[:3], result.x[3:])
    errors = _standard_errors(result, 6)
    rms = math.sqrt(2.0 * result.cost / result.fun.size) if result.fun.size else 0.0
    return PoseRefinement(
        refined,
        rms,
        float(np.degrees(np.linalg.norm(errors[:3]))),
        float(np.linalg.norm(errors[3:])),
    )


def solve_pnp_ransac(
    points3d,
    points2d,
    intrinsics,
    threshold_px=3.0,
    seed=0,
    confidence=RANSAC_CONFIDENCE,
    max_iterations=RANSAC_MAX_ITERATIONS,
):
    """Camera pose from 2D-3D correspondences by RANSAC and LM refinement."""
    X = np.asarray(points3d, dtype=float).reshape(-1, 3)
    uv = np.asarray(points2d, dtype=float).reshape(-1, 2)
    n = len(X)
    if n < PNP_MIN_POINTS:
        raise InsufficientMatches(f"PnP needs {PNP_MIN_POINTS} correspondences, got {n}")
    x = intrinsics.to_normalized(uv)
    frame = plane_frame(X)
    planar = frame.flatness < PLANAR_RATIO
    sample_size = 4 if planar else PNP_MIN_POINTS

    rng = np.random.default_rng(seed)
    best_count, best_score, best_pose = 0, np.inf, None
    required = max_iterations
    iteration = 0
    while iteration < min(required, max_iterations):
        iteration += 1
        sample = rng.choice(n, sample_size, replace=False)
        try:
            if planar:
                uv_plane = (X[sample] - frame.origin) @ frame.axes[:2].T
                if _has_collinear_triplet(uv_plane) or _has_collinear_triplet(x[sample]):
                    continue
                hypothesis = _pose_from_plane(X[sample], x[sample], frame)
            else:
                hypothesis = _pose_from_dlt(X[sample], x[sample])
        except (DegenerateGeometry, np.linalg.LinAlgError, ValueError):
            continue
        if hypothesis is None:
            continue
        err = reprojection_errors(intrinsics, hypothesis, X, uv)
        mask = err < threshold_px
        count = int(mask.sum())
        score = float(np.minimum(err, threshold_px).sum())
        if count > best_count or (count == best_count and count > 0 and score < best_score):
            best_count, best_score, best_pose = count, score, hypothesis
            required = ransac_iterations(count / n, sample_size, confidence, max_iterations)
    logger.debug(
        "PnP RANSAC (%s): %d iterations, %d/%d inliers",
        "planar" if planar else "DLT",
        iteration,
        best_count,
        n,
    )
    if best_count < PNP_MIN_POINTS:
        raise NoConsensus(f"PnP found {best_count} inliers (< {PNP_MIN_POINTS})")

    mask = reprojection_errors(intrinsics, best_pose, X, uv) < threshold_px
    pose = refine_pose(X[mask], uv[mask], intrinsics, best_pose).pose
    mask = reprojection_errors(intrinsics, pose, X, uv) < threshold_px
    if mask.sum() < PNP_MIN_POINTS:
        raise NoConsensus("refined PnP pose lost its consensus set")
    return pose, mask
