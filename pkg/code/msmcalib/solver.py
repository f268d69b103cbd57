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
Incremental external calibration from marker-center correspondences.

Pipeline:
1. Score every camera pair on the spread of its shared correspondences and
   pick the best one.
2. Initialize the pair from the homography induced by the floor: RANSAC,
   decomposition, triangulation of the inliers, pair-wise bundle adjustment.
   Camera A is the identity and the A-B baseline has unit length. A pair
   that cannot be initialized hands over to the next best one.
3. Repeatedly register the unregistered camera with the best view score over
   already-triangulated points (PnP), triangulate new tracks, run an
   intermediate bundle adjustment and re-triangulate. A camera whose PnP
   fails is retried after the next registration, and once more after a
   global bundle adjustment when nothing else is left.
4. Global bundle adjustment over every registered camera and point.

Cameras that never become registrable are reported, not fatal.

Dependencies:
- numpy
- scipy (sparse incidence counts)
- pandas (per-camera statistics table)
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy import sparse

from .bundle import BundleProblem
from .errors import (
    AmbiguousDecomposition,
    ConfigError,
    DegenerateGeometry,
    InitializationFailed,
    InsufficientMatches,
    NoConsensus,
    NoRegistrableCamera,
    NoValidPair,
    ShapeMismatch,
)
from .geometry import (
    Pose,
    decompose_homography,
    estimate_homography_ransac,
    homography_motion_candidates,
    project_with_depth,
    solve_pnp_ransac,
    triangulate_points,
)

logger = logging.getLogger(__name__)

PYRAMID_LEVELS = 3
MAX_TRIANGULATION_RATIO = 0.99


@dataclass(frozen=True)
class SolverOptions:
    ransac_threshold: float = 3.0
    min_pair_matches: int = 50
    pnp_min_inliers: int = 6
    triangulation_max_error: float = 4.0
    ftol: float = 1e-8
    max_iterations: int = 100
    intermediate_iterations: int = 20
    loss: str = "linear"
    huber_scale: float = 2.0
    coplanar: bool = False
    pair_score: str = "min"
    seed: int = 0

    def __post_init__(self):
        for name in ("ransac_threshold", "triangulation_max_error", "ftol", "huber_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("min_pair_matches", "pnp_min_inliers", "max_iterations", "intermediate_iterations"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.pnp_min_inliers < 6:
            raise ConfigError("PnP needs at least 6 inliers")
        if self.loss not in ("linear", "huber"):
            raise ConfigError(f"unknown loss {self.loss!r} (linear | huber)")
        if self.pair_score not in ("min", "sum"):
            raise ConfigError(f"unknown pair score {self.pair_score!r} (min | sum)")

    def to_dict(self):
        return asdict(self)


def compute_view_score(uv, width, height, levels=PYRAMID_LEVELS):
    """Occupied-cell pyramid: sum over levels l of (occupied cells in a 2^l grid) * 2^l."""
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    if width <= 0 or height <= 0:
        raise ConfigError(f"invalid image size {width}x{height}")
    if len(uv) == 0:
        return 0
    score = 0
    for level in range(1, levels + 1):
        n = 2**level
        ix = np.clip(np.floor(uv[:, 0] * n / width), 0, n - 1).astype(np.int64)
        iy = np.clip(np.floor(uv[:, 1] * n / height), 0, n - 1).astype(np.int64)
        score += len(np.unique(iy * n + ix)) * n
    return int(score)


class CorrespondenceGraph:
    """Observations indexed per camera and per track, with pairwise shared-track counts."""

    def __init__(self, observations, intrinsics):
        self.observations = observations
        self.intrinsics = dict(intrinsics)
        missing = set(observations.cameras()) - set(self.intrinsics)
        if missing:
            raise ShapeMismatch(f"no intrinsics for cameras {sorted(missing)}")
        self.cameras = sorted(self.intrinsics)
        self.tracks = observations.tracks()
        self._rows = {c: np.flatnonzero(observations.camera_ids == c) for c in self.cameras}

        cam_index = {c: i for i, c in enumerate(self.cameras)}
        point_ids = np.unique(observations.point_ids)
        incidence = sparse.csr_matrix(
            (
                np.ones(len(observations)),
                (
                    np.array([cam_index[int(c)] for c in observations.camera_ids], dtype=np.int64),
                    np.searchsorted(point_ids, observations.point_ids),
                ),
            ),
            shape=(len(self.cameras), len(point_ids)),
        )
        self._counts = (incidence @ incidence.T).toarray().astype(np.int64)

    def camera_observations(self, camera_id):
        rows = self._rows.get(camera_id, np.zeros(0, dtype=np.int64))
        return self.observations.point_ids[rows], self.observations.uv[rows], rows

    def shared_count(self, a, b):
        return int(self._counts[self.cameras.index(a), self.cameras.index(b)])

    def pair_counts(self):
        counts = {}
        for i, a in enumerate(self.cameras):
            for j in range(i + 1, len(self.cameras)):
                if self._counts[i, j] > 0:
                    counts[(a, self.cameras[j])] = int(self._counts[i, j])
        return counts

    def shared(self, a, b):
        """Point ids seen by both cameras, with the pixels in each."""
        pa, uva, _ = self.camera_observations(a)
        pb, uvb, _ = self.camera_observations(b)
        common, ia, ib = np.intersect1d(pa, pb, assume_unique=True, return_indices=True)
        return common, uva[ia], uvb[ib]

    def view_score(self, camera_id, uv):
        intr = self.intrinsics[camera_id]
        return compute_view_score(uv, intr.width, intr.height)


@dataclass(eq=False)
class Reconstruction:
    """Registered poses and triangulated points, in the gauge of the initial pair."""

    observations: object
    intrinsics: dict
    poses: dict = field(default_factory=dict)
    points: dict = field(default_factory=dict)
    reference: int | None = None
    baseline: int | None = None
    plane: object = None
    registration_order: list = field(default_factory=list)
    pnp_inliers: dict = field(default_factory=dict)
    view_scores: dict = field(default_factory=dict)
    max_error: float = 4.0
    frozen: bool = False

    def _check_mutable(self):
        if self.frozen:
            raise RuntimeError("reconstruction is frozen")

    def add_camera(self, camera_id, pose, view_score=None, inliers=None):
        self._check_mutable()
        self.poses[camera_id] = pose
        self.registration_order.append(camera_id)
        if view_score is not None:
            self.view_scores[camera_id] = view_score
        if inliers is not None:
            self.pnp_inliers[camera_id] = inliers

    def set_point(self, point_id, xyz):
        self._check_mutable()
        self.points[int(point_id)] = np.asarray(xyz, dtype=float)

    def drop_point(self, point_id):
        self._check_mutable()
        self.points.pop(int(point_id), None)

    def camera_poses(self):
        return dict(self.poses)

    def is_registered(self, camera_id):
        return camera_id in self.poses

    def point_array(self):
        ids = np.array(sorted(self.points), dtype=np.int64)
        xyz = np.array([self.points[i] for i in ids]).reshape(-1, 3)
        return ids, xyz

    def reprojection(self):
        """Residual rows (camera, point, du, dv, depth) of every observation of a triangulated point by a registered camera."""
        obs = self.observations
        mask = np.isin(obs.camera_ids, list(self.poses)) & np.isin(obs.point_ids, list(self.points))
        rows = np.flatnonzero(mask)
        residual = np.full((len(rows), 2), np.nan)
        depth = np.full(len(rows), np.nan)
        if len(rows):
            X = np.array([self.points[int(p)] for p in obs.point_ids[rows]])
            cams = obs.camera_ids[rows]
            for c in np.unique(cams):
                sel = cams == c
                uv, z = project_with_depth(self.intrinsics[int(c)], self.poses[int(c)], X[sel])
                residual[sel] = uv - obs.uv[rows[sel]]
                depth[sel] = z
        return rows, residual, depth

    def inlier_rows(self):
        rows, residual, depth = self.reprojection()
        err = np.linalg.norm(residual, axis=1)
        ok = (depth > 0) & (err <= self.max_error)
        return rows[ok], residual[ok]

    def reprojection_rms(self, camera_id=None):
        """Per-coordinate RMS reprojection error over the inlier observations, in pixels."""
        rows, residual = self.inlier_rows()
        if camera_id is not None:
            residual = residual[self.observations.camera_ids[rows] == camera_id]
        if len(residual) == 0:
            return float("nan")
        return float(np.sqrt(np.mean(residual**2)))

    def camera_table(self):
        rows, residual = self.inlier_rows()
        cams = self.observations.camera_ids[rows]
        err = np.linalg.norm(residual, axis=1)
        table = []
        for c in sorted(self.intrinsics):
            sel = cams == c
            intr = self.intrinsics[c]
            table.append(
                {
                    "camera_id": c,
                    "registered": c in self.poses,
                    "order": self.registration_order.index(c) if c in self.poses else -1,
                    "observations": int(sel.sum()),
                    "view_score": compute_view_score(self.observations.uv[rows[sel]], intr.width, intr.height),
                    "rms_px": float(np.sqrt(np.mean(residual[sel] ** 2))) if sel.any() else np.nan,
                    "max_px": float(err[sel].max()) if sel.any() else np.nan,
                    "pnp_inliers": self.pnp_inliers.get(c, -1),
                }
            )
        return pd.DataFrame(table)

    def unregistered(self):
        return [c for c in sorted(self.intrinsics) if c not in self.poses]

    def freeze(self):
        for xyz in self.points.values():
            xyz.setflags(write=False)
        self.frozen = True
        return self


# Initialization


def rank_initial_pairs(graph, options=None):
    """Pairs with enough shared correspondences, best two-sided view score first."""
    options = options or SolverOptions()
    ranked = []
    for (a, b), count in graph.pair_counts().items():
        if count < options.min_pair_matches:
            continue
        _, uva, uvb = graph.shared(a, b)
        sa, sb = graph.view_score(a, uva), graph.view_score(b, uvb)
        score = min(sa, sb) if options.pair_score == "min" else sa + sb
        ranked.append((-score, -count, a, b))
    ranked.sort()
    return [(a, b) for _, _, a, b in ranked]


def select_initial_pair(graph, options=None):
    """Pair with the best two-sided view score over its shared correspondences."""
    options = options or SolverOptions()
    ranked = rank_initial_pairs(graph, options)
    if not ranked:
        raise NoValidPair(f"no camera pair shares {options.min_pair_matches} correspondences")
    pair = ranked[0]
    logger.info("initial pair %s: %d shared correspondences", pair, graph.shared_count(*pair))
    return pair


def _pair_reprojection(pose_b, xa, xb, focal_a, focal_b):
    # triangulate with A at the identity, pixel errors and depths in both views
    X, _ = triangulate_points(Pose.identity(), pose_b, xa, xb)
    Xb = pose_b.transform(X)
    with np.errstate(divide="ignore", invalid="ignore"):
        err_a = np.linalg.norm(X[:, :2] / X[:, 2:3] - xa, axis=1) * focal_a
        err_b = np.linalg.norm(Xb[:, :2] / Xb[:, 2:3] - xb, axis=1) * focal_b
    err = np.maximum(err_a, err_b)
    ok = np.isfinite(err) & (X[:, 2] > 0) & (Xb[:, 2] > 0)
    return X, np.where(ok, err, np.inf)


def _disambiguate_with_parallax(H, xa, xb, mask, focal_a, focal_b):
    """Pick the decomposition that best explains every shared match, planar or not."""
    candidates = homography_motion_candidates(H, xa[mask], xb[mask])
    scored = []
    for candidate in candidates:
        if candidate.positive == 0:
            continue
        _, err = _pair_reprojection(candidate.pose, xa, xb, focal_a, focal_b)
        scored.append((float(np.median(err)), candidate))
    scored.sort(key=lambda s: s[0])
    if len(scored) < 2:
        raise AmbiguousDecomposition("no decomposition survives the parallax check")
    (best_err, best), (second_err, _) = scored[0], scored[1]
    if not (np.isfinite(best_err) and second_err > 2.0 * best_err + 1e-9):
        raise AmbiguousDecomposition(
            f"off-plane matches do not separate the decompositions ({best_err:.3g} vs {second_err:.3g} px)"
        )
    logger.info("planar decomposition disambiguated by parallax (%.3g vs %.3g px)", best_err, second_err)
    return best.pose


def initialize_pair(graph, pair, options=None):
    """Reconstruction of the initial pair from its inter-image homography."""
    options = options or SolverOptions()
    a, b = pair
    ka, kb = graph.intrinsics[a], graph.intrinsics[b]
    point_ids, uva, uvb = graph.shared(a, b)
    xa, xb = ka.to_normalized(uva), kb.to_normalized(uvb)
    fa, fb = ka.mean_focal, kb.mean_focal
    try:
        H, mask = estimate_homography_ransac(xa, xb, fa, fb, options.ransac_threshold, options.seed)
        try:
            relative, _ = decompose_homography(H, xa[mask], xb[mask])
        except AmbiguousDecomposition:
            relative = _disambiguate_with_parallax(H, xa, xb, mask, fa, fb)
    except (NoConsensus, InsufficientMatches, AmbiguousDecomposition, DegenerateGeometry) as e:
        raise InitializationFailed(f"pair {pair}: {e}") from e
    logger.info("pair %s: %d/%d homography inliers", pair, int(mask.sum()), len(mask))

    recon = Reconstruction(
        graph.observations,
        graph.intrinsics,
        reference=a,
        baseline=b,
        max_error=options.triangulation_max_error,
    )
    recon.add_camera(a, Pose.identity(), graph.view_score(a, uva))
    recon.add_camera(b, relative, graph.view_score(b, uvb))

    X, err = _pair_reprojection(relative, xa[mask], xb[mask], fa, fb)
    keep = err < options.triangulation_max_error
    for pid, xyz in zip(point_ids[mask][keep], X[keep]):
        recon.set_point(pid, xyz)
    if len(recon.points) < 4:
        raise InitializationFailed(f"pair {pair}: only {len(recon.points)} points triangulated")
    cost = bundle_adjust(recon, options, mode="pair")
    logger.info("pair %s: %d points, BA cost %.4g px^2", pair, len(recon.points), cost)
    return recon


# Incremental registration


def register_next_camera(recon, graph, options=None, failed=None):
    """Register the unregistered camera with the best view score over triangulated points.

    `failed` maps camera ids to the number of registered cameras at their last
    failed attempt; such a camera is retried once another camera has been
    registered and the structure refined.
    """
    options = options or SolverOptions()
    failed = {} if failed is None else failed
    candidates = []
    for c in graph.cameras:
        if recon.is_registered(c):
            continue
        pids, uv, _ = graph.camera_observations(c)
        known = np.isin(pids, list(recon.points))
        count = int(known.sum())
        if count < options.pnp_min_inliers or failed.get(c) == len(recon.poses):
            continue
        score = graph.view_score(c, uv[known])
        candidates.append((-score, -count, c, pids[known], uv[known]))
    candidates.sort(key=lambda item: item[:3])

    for neg_score, neg_count, c, pids, uv in candidates:
        X = np.array([recon.points[int(p)] for p in pids])
        try:
            pose, inliers = solve_pnp_ransac(
                X, uv, graph.intrinsics[c], options.ransac_threshold, options.seed + c
            )
        except (NoConsensus, InsufficientMatches) as e:
            logger.info("camera %d: PnP failed on %d correspondences (%s)", c, -neg_count, e)
            failed[c] = len(recon.poses)
            continue
        if inliers.sum() < options.pnp_min_inliers:
            failed[c] = len(recon.poses)
            continue
        recon.add_camera(c, pose, -neg_score, int(inliers.sum()))
        logger.info(
            "camera %d registered: score %d, %d/%d PnP inliers", c, -neg_score, int(inliers.sum()), len(inliers)
        )
        return c
    raise NoRegistrableCamera("no unregistered camera can be localized from the triangulated points")


def _world_rays(poses, intrinsics, observations, rows):
    rays = np.zeros((len(rows), 3))
    cams = observations.camera_ids[rows]
    for c in np.unique(cams):
        sel = cams == c
        x = intrinsics[int(c)].to_normalized(observations.uv[rows[sel]])
        d = np.column_stack((x, np.ones(len(x)))) @ poses[int(c)].R
        rays[sel] = d / np.linalg.norm(d, axis=1, keepdims=True)
    return rays


def observation_errors(poses, intrinsics, observations, rows, X):
    """Pixel errors and camera depths of observation rows against points X (one per row)."""
    err = np.full(len(rows), np.inf)
    depth = np.full(len(rows), -1.0)
    cams = observations.camera_ids[rows]
    for c in np.unique(cams):
        sel = cams == c
        uv, z = project_with_depth(intrinsics[int(c)], poses[int(c)], X[sel])
        err[sel] = np.linalg.norm(uv - observations.uv[rows[sel]], axis=1)
        depth[sel] = z
    return np.where(np.isfinite(err), err, np.inf), depth


def triangulate_widest_pairs(poses, intrinsics, observations, tracks):
    """DLT triangulation of each track from its two most divergent rays.

    `tracks` is a list of (point_id, observation rows) restricted to cameras in
    `poses`. Returns the point ids, their rows, the points and the DLT
    singular value ratios, in input order.
    """
    if not tracks:
        return [], [], np.zeros((0, 3)), np.zeros(0)
    all_rows = np.concatenate([rows for _, rows in tracks])
    rays = _world_rays(poses, intrinsics, observations, all_rows)
    starts = np.cumsum([0] + [len(rows) for _, rows in tracks])
    first = np.empty(len(tracks), dtype=np.int64)
    second = np.empty(len(tracks), dtype=np.int64)
    for n, (_, rows) in enumerate(tracks):
        D = rays[starts[n] : starts[n + 1]]
        cosine = D @ D.T
        i, j = np.unravel_index(np.argmin(cosine), cosine.shape)
        first[n], second[n] = rows[i], rows[j]

    X = np.full((len(tracks), 3), np.nan)
    ratio = np.ones(len(tracks))
    cam_a = observations.camera_ids[first]
    cam_b = observations.camera_ids[second]
    for ca, cb in sorted(set(zip(cam_a.tolist(), cam_b.tolist()))):
        sel = np.flatnonzero((cam_a == ca) & (cam_b == cb))
        if ca == cb:
            continue
        xa = intrinsics[ca].to_normalized(observations.uv[first[sel]])
        xb = intrinsics[cb].to_normalized(observations.uv[second[sel]])
        X[sel], ratio[sel] = triangulate_points(poses[ca], poses[cb], xa, xb)
    return [pid for pid, _ in tracks], [rows for _, rows in tracks], X, ratio


def accept_points(poses, intrinsics, observations, rows_list, X, ratio, max_error):
    """Flags: well-conditioned, in front of every observer and within `max_error` px of each."""
    ok = (ratio <= MAX_TRIANGULATION_RATIO) & np.all(np.isfinite(X), axis=1)
    if not len(rows_list):
        return ok
    lengths = np.array([len(rows) for rows in rows_list])
    all_rows = np.concatenate(rows_list)
    owner = np.repeat(np.arange(len(rows_list)), lengths)
    err, depth = observation_errors(poses, intrinsics, observations, all_rows, np.nan_to_num(X[owner]))
    bad = ~((depth > 0) & (err < max_error))
    ok &= np.bincount(owner, weights=bad, minlength=len(rows_list)) == 0
    return ok


def triangulate_tracks(recon, graph, options=None):
    """Triangulate tracks with >= 2 registered observers and no point yet; returns the count added."""
    options = options or SolverOptions()
    obs = graph.observations
    registered = np.array(sorted(recon.poses))
    pending = []
    for pid, rows in graph.tracks.items():
        if pid in recon.points:
            continue
        rows = rows[np.isin(obs.camera_ids[rows], registered)]
        if len(rows) >= 2:
            pending.append((pid, rows))
    if not pending:
        return 0
    pids, rows_list, X, ratio = triangulate_widest_pairs(recon.poses, recon.intrinsics, obs, pending)
    ok = accept_points(recon.poses, recon.intrinsics, obs, rows_list, X, ratio, options.triangulation_max_error)
    for pid, xyz in zip(np.asarray(pids)[ok], X[ok]):
        recon.set_point(pid, xyz)
    logger.debug("triangulated %d of %d pending tracks", int(ok.sum()), len(pending))
    return int(ok.sum())


def filter_points(recon, min_observations=2):
    """Drop points left with fewer than `min_observations` inlier observations."""
    rows, _ = recon.inlier_rows()
    pids, counts = np.unique(recon.observations.point_ids[rows], return_counts=True)
    good = set(pids[counts >= min_observations].tolist())
    dropped = [p for p in recon.points if p not in good]
    for p in dropped:
        recon.drop_point(p)
    return len(dropped)


def bundle_adjust(recon, options=None, mode="global"):
    """Refine registered poses and points on their inlier observations; returns the final cost.

    Solved with scipy's trust-region reflective method on the sparse Jacobian.
    The cost is the mean squared reprojection residual per coordinate, in px^2.
    """
    options = options or SolverOptions()
    if mode not in ("pair", "intermediate", "global"):
        raise ConfigError(f"unknown bundle adjustment mode {mode!r}")
    filter_points(recon)
    rows, _ = recon.inlier_rows()
    obs = recon.observations
    point_ids, xyz = recon.point_array()
    cameras = sorted(set(obs.camera_ids[rows].tolist()) | {recon.reference})
    problem = BundleProblem(
        recon.intrinsics,
        {c: recon.poses[c] for c in cameras},
        point_ids,
        xyz,
        obs.camera_ids[rows],
        obs.point_ids[rows],
        obs.uv[rows],
        obs.weight[rows],
        reference=recon.reference,
        baseline=recon.baseline,
        coplanar=options.coplanar,
    )
    max_nfev = options.intermediate_iterations if mode == "intermediate" else options.max_iterations
    loss = "huber" if options.loss == "huber" else "linear"
    result = problem.solve(loss, options.huber_scale, options.ftol, max_nfev)
    for c, pose in result.poses.items():
        recon.poses[c] = pose
    for pid, p in zip(point_ids, result.points):
        recon.set_point(pid, p)
    if result.plane is not None:
        recon.plane = result.plane
    logger.debug("%s BA over %d cameras / %d points: cost %.4g", mode, len(cameras), len(point_ids), result.cost)
    return result.cost


def calibrate(observations, intrinsics, options=None):
    """Full incremental calibration; unregistered cameras are flagged in the result."""
    options = options or SolverOptions()
    graph = CorrespondenceGraph(observations, intrinsics)
    ranked = rank_initial_pairs(graph, options)
    if not ranked:
        raise InitializationFailed(f"no camera pair shares {options.min_pair_matches} correspondences")
    recon = None
    for pair in ranked:
        try:
            recon = initialize_pair(graph, pair, options)
            break
        except InitializationFailed as e:
            # a planar pair can be ambiguous while the next one is not
            logger.warning("%s; trying the next pair", e)
            last_error = e
    if recon is None:
        raise last_error
    logger.info("initial pair %s", pair)
    triangulate_tracks(recon, graph, options)
    bundle_adjust(recon, options, mode="intermediate")
    triangulate_tracks(recon, graph, options)

    failed = {}
    refined_at = None
    while True:
        try:
            register_next_camera(recon, graph, options, failed)
        except NoRegistrableCamera:
            pending = [c for c in failed if not recon.is_registered(c)]
            if not pending or refined_at == len(recon.poses):
                break
            # one more attempt for failed cameras against globally refined points
            logger.info("retrying cameras %s after global refinement", pending)
            refined_at = len(recon.poses)
            bundle_adjust(recon, options, mode="global")
            triangulate_tracks(recon, graph, options)
            failed.clear()
            continue
        triangulate_tracks(recon, graph, options)
        bundle_adjust(recon, options, mode="intermediate")
        triangulate_tracks(recon, graph, options)

    cost = bundle_adjust(recon, options, mode="global")
    filter_points(recon)
    unregistered = recon.unregistered()
    logger.info(
        "calibration: %d/%d cameras, %d points, cost %.4g px^2, RMS %.4f px",
        len(recon.poses),
        len(graph.cameras),
        len(recon.points),
        cost,
        recon.reprojection_rms() if recon.points else math.nan,
    )
    if unregistered:
        logger.warning("unregistered cameras: %s", unregistered)
    return recon.freeze()
