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
Sparse bundle adjustment: joint least-squares refinement of camera poses and
scene points on pixel reprojection residuals, with known intrinsics.

Parametrization:
- Free camera: rotation vector (3) and translation (3), x_cam = Exp(r) X + t.
- Reference camera: fixed.
- Baseline camera: rotation vector (3) and two tangent angles that rotate its
  initial translation, so the baseline length never changes.
- Points: free XYZ, or (u, v) on a shared plane whose tilt (2) and offset (1)
  are optimized with the points (coplanar mode). The in-plane frame is fixed at
  construction: origin at the centroid, axes along the two dominant directions.

The Jacobian is analytic and assembled as a scipy sparse matrix; the problem is
solved with scipy's trust-region reflective least squares.

Dependencies:
- numpy
- scipy (least_squares, sparse)
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import sparse
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .errors import GaugeUndefined, NonConvergence, ShapeMismatch
from .geometry import Pose, plane_frame, skew, so3_left_jacobian

logger = logging.getLogger(__name__)


class Plane(NamedTuple):
    normal: np.ndarray
    offset: float  # normal . X = offset
    origin: np.ndarray
    axes: np.ndarray  # rows: in-plane a, in-plane b, normal

    def distance(self, points):
        return np.asarray(points) @ self.normal - self.offset


@dataclass
class BundleResult:
    poses: dict
    points: np.ndarray
    plane: Plane | None
    cost: float
    initial_cost: float
    nfev: int
    x: np.ndarray = None


def _rotations(rotvecs):
    return Rotation.from_rotvec(rotvecs).as_matrix().reshape(-1, 3, 3)


class BundleProblem:
    """Reprojection least-squares problem over the given cameras, points and observations.

    `obs_cameras` / `obs_points` hold camera ids and point ids; every id must
    appear in `poses` / `point_ids`.
    """

    def __init__(
        self,
        intrinsics,
        poses,
        point_ids,
        points,
        obs_cameras,
        obs_points,
        uv,
        weight=None,
        reference=None,
        baseline=None,
        coplanar=False,
        fixed=(),
    ):
        self.camera_ids = sorted(poses)
        self.point_ids = np.asarray(point_ids, dtype=np.int64)
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(points) != len(self.point_ids):
            raise ShapeMismatch("point ids and coordinates differ in length")
        cam_index = {c: i for i, c in enumerate(self.camera_ids)}
        pt_index = {int(p): i for i, p in enumerate(self.point_ids)}
        try:
            self._ci = np.array([cam_index[int(c)] for c in obs_cameras], dtype=np.int64)
            self._pi = np.array([pt_index[int(p)] for p in obs_points], dtype=np.int64)
        except KeyError as e:
            raise ShapeMismatch(f"observation refers to unknown camera or point {e}") from None
        observed = set(np.asarray(obs_cameras, dtype=np.int64).tolist())
        for role, c in (("reference", reference), ("baseline", baseline)):
            if observed and c is not None and c not in fixed and c not in observed:
                raise GaugeUndefined(f"{role} camera {c} has no observations; the gauge would float")
        self._uv = np.asarray(uv, dtype=float).reshape(-1, 2)
        w = np.ones(len(self._uv)) if weight is None else np.asarray(weight, dtype=float)
        self._sqrt_w = np.sqrt(w)
        self._fx = np.array([intrinsics[c].fx for c in self.camera_ids])
        self._fy = np.array([intrinsics[c].fy for c in self.camera_ids])
        self._cx = np.array([intrinsics[c].cx for c in self.camera_ids])
        self._cy = np.array([intrinsics[c].cy for c in self.camera_ids])

        self._rotvec0 = np.array([poses[c].rotvec for c in self.camera_ids]).reshape(-1, 3)
        self._trans0 = np.array([poses[c].translation for c in self.camera_ids]).reshape(-1, 3)
        self.reference = reference if reference in cam_index else None
        self.baseline = baseline if (baseline in cam_index and baseline != self.reference and baseline not in fixed) else None

        # camera blocks: (index, offset, kind)
        self._cam_blocks = []
        offset = 0
        for c in self.camera_ids:
            if c == self.reference or c in fixed:
                continue
            kind = "baseline" if c == self.baseline else "free"
            self._cam_blocks.append((cam_index[c], offset, kind))
            offset += 5 if kind == "baseline" else 6
        if self.baseline is not None:
            t0 = self._trans0[cam_index[self.baseline]]
            self._basis = np.linalg.svd(t0[None, :])[2][1:].T  # (3, 2), orthogonal to t0

        self.coplanar = coplanar
        self._plane_offset = offset
        if coplanar:
            frame = plane_frame(points)
            self._o0 = frame.origin
            self._F0 = frame.axes.T  # columns a0, b0, n0
            offset += 3
        self._point_offset = offset
        self._point_dim = 2 if coplanar else 3
        self.n_params = offset + self._point_dim * len(points)
        self.x0 = self._pack_initial(points)

    def _pack_initial(self, points):
        x = np.zeros(self.n_params)
        for ci, off, kind in self._cam_blocks:
            x[off : off + 3] = self._rotvec0[ci]
            if kind == "free":
                x[off + 3 : off + 6] = self._trans0[ci]
        if self.coplanar:
            local = (points - self._o0) @ self._F0
            x[self._point_offset :] = local[:, :2].ravel()
        else:
            x[self._point_offset :] = points.ravel()
        return x

    # parameter unpacking

    def _cameras(self, x):
        rotvecs = self._rotvec0.copy()
        trans = self._trans0.copy()
        tangent = None
        for ci, off, kind in self._cam_blocks:
            rotvecs[ci] = x[off : off + 3]
            if kind == "free":
                trans[ci] = x[off + 3 : off + 6]
            else:
                tangent = self._basis @ x[off + 3 : off + 5]
                trans[ci] = Rotation.from_rotvec(tangent).apply(self._trans0[ci])
        return rotvecs, trans, tangent

    def _points(self, x):
        block = x[self._point_offset :].reshape(-1, self._point_dim)
        if not self.coplanar:
            return block, None
        phi = self._F0[:, :2] @ x[self._plane_offset : self._plane_offset + 2]
        delta = x[self._plane_offset + 2]
        Q = Rotation.from_rotvec(phi).as_matrix()
        local = np.column_stack((block, np.full(len(block), delta)))
        Y = local @ self._F0.T  # F0 (u, v, delta)
        return self._o0 + Y @ Q.T, (phi, Q, Y)

    def unpack(self, x):
        """Poses keyed by camera id, points (P, 3) and the plane (coplanar mode)."""
        rotvecs, trans, _ = self._cameras(x)
        X, plane_state = self._points(x)
        poses = {c: Pose.from_rotvec(rotvecs[i], trans[i]) for i, c in enumerate(self.camera_ids)}
        plane = None
        if plane_state is not None:
            _, Q, _ = plane_state
            normal = Q @ self._F0[:, 2]
            axes = np.vstack((Q @ self._F0[:, 0], Q @ self._F0[:, 1], normal))
            origin = self._o0 + x[self._plane_offset + 2] * normal
            plane = Plane(normal, float(normal @ origin), origin, axes)
        return poses, X, plane

    # residuals and Jacobian

    def _camera_frame(self, x):
        rotvecs, trans, tangent = self._cameras(x)
        R = _rotations(rotvecs)
        X, plane_state = self._points(x)
        RX = np.einsum("mij,mj->mi", R[self._ci], X[self._pi])
        Xc = RX + trans[self._ci]
        return rotvecs, trans, tangent, R, X, plane_state, RX, Xc

    def _project(self, Xc):
        z = Xc[:, 2]
        u = self._fx[self._ci] * Xc[:, 0] / z + self._cx[self._ci]
        v = self._fy[self._ci] * Xc[:, 1] / z + self._cy[self._ci]
        return np.column_stack((u, v))

    def residuals(self, x):
        Xc = self._camera_frame(x)[-1]
        r = (self._project(Xc) - self._uv) * self._sqrt_w[:, None]
        return r.ravel()

    def jacobian(self, x):
        rotvecs, trans, tangent, R, X, plane_state, RX, Xc = self._camera_frame(x)
        m = len(Xc)
        z = Xc[:, 2]
        fx, fy = self._fx[self._ci], self._fy[self._ci]
        P = np.zeros((m, 2, 3))
        P[:, 0, 0] = fx / z
        P[:, 0, 2] = -fx * Xc[:, 0] / z**2
        P[:, 1, 1] = fy / z
        P[:, 1, 2] = -fy * Xc[:, 1] / z**2
        P *= self._sqrt_w[:, None, None]

        rows, cols, vals = [], [], []

        def add(obs, col_start, block):
            k = block.shape[2]
            r = 2 * obs[:, None, None] + np.arange(2)[None, :, None]
            c = col_start[:, None, None] + np.arange(k)[None, None, :]
            rows.append(np.broadcast_to(r, block.shape).ravel())
            cols.append(np.broadcast_to(c, block.shape).ravel())
            vals.append(block.ravel())

        Jl = so3_left_jacobian(rotvecs)
        for ci, off, kind in self._cam_blocks:
            obs = np.flatnonzero(self._ci == ci)
            if len(obs) == 0:
                continue
            Pc = P[obs]
            dR = -skew(RX[obs]) @ Jl[ci]
            add(obs, np.full(len(obs), off), Pc @ dR)
            if kind == "free":
                add(obs, np.full(len(obs), off + 3), Pc)
            else:
                dt = -skew(trans[ci]) @ so3_left_jacobian(tangent) @ self._basis
                add(obs, np.full(len(obs), off + 3), Pc @ dt)

        obs = np.arange(m)
        PR = P @ R[self._ci]
        if self.coplanar:
            phi, Q, Y = plane_state
            add(obs, self._point_offset + 2 * self._pi, PR @ (Q @ self._F0[:, :2]))
            dtilt = -skew(Y @ Q.T) @ so3_left_jacobian(phi) @ self._F0[:, :2]  # (P, 3, 2)
            dplane = np.concatenate((dtilt, np.broadcast_to((Q @ self._F0[:, 2])[None, :, None], (len(Y), 3, 1))), axis=2)
            add(obs, np.full(m, self._plane_offset), PR @ dplane[self._pi])
        else:
            add(obs, self._point_offset + 3 * self._pi, PR)

        J = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(2 * m, self.n_params),
        )
        return J.tocsr()

    def cost(self, x):
        r = self.residuals(x)
        return float(r @ r / len(r)) if len(r) else 0.0

    def solve(self, loss="linear", f_scale=2.0, ftol=1e-8, max_nfev=100):
        initial = self.cost(self.x0)
        if not np.isfinite(initial):
            raise NonConvergence("bundle adjustment starts from a non-finite cost")
        if len(self._uv) == 0 or self.n_params == 0:
            poses, X, plane = self.unpack(self.x0)
            return BundleResult(poses, X, plane, initial, initial, 0, self.x0)
        result = least_squares(
            self.residuals,
            self.x0,
            jac=self.jacobian,
            method="trf",
            x_scale="jac",
            loss=loss,
            f_scale=f_scale,
            ftol=ftol,
            xtol=1e-12,
            gtol=1e-12,
            max_nfev=max_nfev,
        )
        final = self.cost(result.x)
        if not np.isfinite(final):
            raise NonConvergence("bundle adjustment diverged to a non-finite cost")
        poses, X, plane = self.unpack(result.x)
        logger.debug(
            "BA: %d params, %d residuals, cost %.6g -> %.6g in %d evaluations",
            self.n_params,
            len(result.fun),
            initial,
            final,
            result.nfev,
        )
        return BundleResult(poses, X, plane, final, initial, int(result.nfev), result.x)
