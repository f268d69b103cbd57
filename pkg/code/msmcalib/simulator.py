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
Synthetic multi-camera scenes for the calibration study.

Key Features:
- Camera rigs on two horizontal circles (far field and near field) looking at
  the scene origin, plus an optional long-focal close-up camera.
- Three point distributions: calibration boards floating in a cylindrical
  volume, boards lying on the floor, and the regular floor grid of projected
  marker centers.
- Marker visibility gating: a projected marker is detected by a camera only if
  at least one of its scales images to a diameter inside the detectable range.
- Per-scale corner detections of the floor markers, ready for `fuse_detections`.
- Held-out floor correspondences for evaluation.
- Monte-Carlo sweeps over scenarios and noise levels, optionally in parallel,
  with rows sorted by (scenario, sigma, trial).

Scene units are metres; pixels follow the 1920x1080 camera model.

Dependencies:
- numpy
- scipy (Rotation)
- pandas (Monte-Carlo report and summary tables)
"""
from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from .errors import CalibrationError, ConfigError, QuotaUnreachable, ShapeMismatch
from .geometry import Camera, CameraIntrinsics, CameraRig, look_at, project_with_depth
from .msm import DEFAULT_SCALES, Detection, ObservationSet, ScaleSet

logger = logging.getLogger(__name__)

MAX_BOARDS = 10_000
MAX_PLACEMENT_ATTEMPTS = 1_000
DEFAULT_SIGMAS = (0.0, 0.1, 0.3, 0.5, 1.0)

FAR, NEAR, CLOSEUP = "far", "near", "closeup"


class Scenario(enum.Enum):
    BOARD_VOLUME = "board_volume"
    BOARD_FLOOR = "board_floor"
    GRID_FLOOR = "grid_floor"

    @property
    def uses_boards(self):
        return self is not Scenario.GRID_FLOOR


@dataclass(frozen=True)
class VisibilityModel:
    """Detectable range of the imaged marker diameter, in pixels."""

    min_diameter: float = 20.0
    max_diameter: float = 400.0
    full_quad: bool = True

    def __post_init__(self):
        if not (0 < self.min_diameter < self.max_diameter):
            raise ConfigError(
                f"visibility needs 0 < min < max, got {self.min_diameter} / {self.max_diameter}"
            )


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario = Scenario.GRID_FLOOR
    # rig
    far_count: int = 6
    far_radius: float = 2.8
    far_height: float = 2.8
    near_count: int = 4
    near_radius: float = 1.2
    near_height: float = 1.4
    focal: float = 915.0
    image_width: int = 1920
    image_height: int = 1080
    closeup: bool = False
    closeup_focal: float = 11_100.0
    # boards
    board_width: float = 1.20
    board_height: float = 0.85
    board_cols: int = 12
    board_rows: int = 8
    volume_radius: float = 3.0
    volume_height: float = 1.5
    floor_radius: float = 3.0
    near_quota: int = 2000
    far_quota: int = 3000
    # projected grid
    grid_rows: int = 40
    grid_cols: int = 80
    grid_width: float = 4.0
    grid_depth: float = 3.0
    marker_size: float = 0.05
    scales: tuple = DEFAULT_SCALES
    msm_gating: bool = True
    visibility: VisibilityModel = field(default_factory=VisibilityModel)
    heldout_count: int = 1000
    # noise
    sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if isinstance(self.visibility, dict):
            object.__setattr__(self, "visibility", VisibilityModel(**self.visibility))
        object.__setattr__(self, "scales", ScaleSet(tuple(self.scales)).values)
        positive = (
            "far_radius", "far_height", "near_radius", "near_height", "focal", "closeup_focal",
            "board_width", "board_height", "volume_radius", "volume_height", "floor_radius",
            "grid_width", "grid_depth", "marker_size",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        counts = (
            "board_cols", "board_rows", "near_quota", "far_quota", "grid_rows", "grid_cols",
            "heldout_count", "image_width", "image_height",
        )
        for name in counts:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.far_count < 0 or self.near_count < 0 or self.far_count + self.near_count < 1:
            raise ConfigError("the rig needs at least one far or near camera")
        if not self.sigma >= 0:
            raise ConfigError(f"noise sigma must be >= 0, got {self.sigma}")

    @property
    def grid_count(self):
        return self.grid_rows * self.grid_cols

    def to_dict(self):
        data = asdict(self)
        data["scenario"] = self.scenario.value
        data["scales"] = list(self.scales)
        return data


@dataclass(frozen=True, eq=False)
class ScenePoints:
    """Ground-truth points; `board_ids` is -1 for floor-grid points."""

    point_ids: np.ndarray
    xyz: np.ndarray
    normals: np.ndarray
    board_ids: np.ndarray

    def __len__(self):
        return len(self.point_ids)

    def position(self, point_ids):
        lookup = {int(p): i for i, p in enumerate(self.point_ids)}
        return self.xyz[[lookup[int(p)] for p in point_ids]]


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    config: ScenarioConfig
    rig: CameraRig
    points: ScenePoints
    observations: ObservationSet
    sigma: float
    seed: int
    heldout_points: ScenePoints | None = None
    heldout: ObservationSet | None = None


def _seed_streams(seed, count):
    """Independent generators from an int seed or from a parent generator."""
    if isinstance(seed, np.random.Generator):
        seed = seed.integers(0, 2**32, size=4).tolist()
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def sample_rig(config, seed=0):
    """Far and near cameras at random azimuths on their circles, all aimed at the origin."""
    rng = np.random.default_rng(seed)
    size = (config.image_width, config.image_height)
    wide = CameraIntrinsics.from_focal(config.focal, *size)
    cameras = []
    layout = [(FAR, config.far_count, config.far_radius, config.far_height)]
    layout.append((NEAR, config.near_count, config.near_radius, config.near_height))
    for category, count, radius, height in layout:
        for azimuth in rng.uniform(0.0, 2.0 * math.pi, count):
            center = (radius * math.cos(azimuth), radius * math.sin(azimuth), height)
            cameras.append(Camera(len(cameras), wide, look_at(center, (0.0, 0.0, 0.0)), category))
    if config.closeup:
        azimuth = rng.uniform(0.0, 2.0 * math.pi)
        center = (config.far_radius * math.cos(azimuth), config.far_radius * math.sin(azimuth), config.far_height)
        narrow = CameraIntrinsics.from_focal(config.closeup_focal, *size)
        cameras.append(Camera(len(cameras), narrow, look_at(center, (0.0, 0.0, 0.0)), CLOSEUP))
    return CameraRig(tuple(cameras))


def board_lattice(config):
    """Board points in board coordinates (z = 0, normal +z), centred on the board."""
    u = (np.arange(config.board_cols) + 0.5) * config.board_width / config.board_cols - config.board_width / 2
    v = (np.arange(config.board_rows) + 0.5) * config.board_height / config.board_rows - config.board_height / 2
    gu, gv = np.meshgrid(u, v)
    return np.column_stack((gu.ravel(), gv.ravel(), np.zeros(gu.size)))


def floor_grid(config):
    """Projected marker centers on the floor, row-major so index = marker id."""
    xs = np.linspace(-config.grid_width / 2, config.grid_width / 2, config.grid_cols)
    ys = np.linspace(-config.grid_depth / 2, config.grid_depth / 2, config.grid_rows)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack((gx.ravel(), gy.ravel(), np.zeros(gx.size)))


def _place_board(config, lattice, rng):
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        if config.scenario is Scenario.BOARD_VOLUME:
            r = config.volume_radius * math.sqrt(rng.uniform())
            theta = rng.uniform(0.0, 2.0 * math.pi)
            center = np.array([r * math.cos(theta), r * math.sin(theta), rng.uniform(0.0, config.volume_height)])
            q = rng.normal(size=4)
            rotation = Rotation.from_quat(q / np.linalg.norm(q))
            pts = rotation.apply(lattice) + center
            inside = (np.hypot(pts[:, 0], pts[:, 1]) <= config.volume_radius) & (pts[:, 2] >= 0) & (
                pts[:, 2] <= config.volume_height
            )
            normal = rotation.apply([0.0, 0.0, 1.0])
        else:
            r = config.floor_radius * math.sqrt(rng.uniform())
            theta = rng.uniform(0.0, 2.0 * math.pi)
            center = np.array([r * math.cos(theta), r * math.sin(theta), 0.0])
            rotation = Rotation.from_rotvec([0.0, 0.0, rng.uniform(0.0, 2.0 * math.pi)])
            pts = rotation.apply(lattice) + center
            pts[:, 2] = 0.0
            inside = np.hypot(pts[:, 0], pts[:, 1]) <= config.floor_radius
            normal = np.array([0.0, 0.0, 1.0])
        if inside.all():
            return pts, normal
    raise QuotaUnreachable(f"could not place a board inside the working area in {MAX_PLACEMENT_ATTEMPTS} attempts")


def _class_means(rig, counts):
    means = {}
    for category in (FAR, NEAR):
        idx = [i for i, cam in enumerate(rig) if cam.category == category]
        if idx:
            means[category] = float(np.mean(counts[idx]))
    return means


def sample_points(config, rig, seed=0):
    """Ground-truth points for the configured scenario.

    Board scenarios keep adding boards until the mean observation count of each
    camera class reaches its quota.
    """
    if config.scenario is Scenario.GRID_FLOOR:
        xyz = floor_grid(config)
        n = len(xyz)
        return ScenePoints(np.arange(n), xyz, np.tile([0.0, 0.0, 1.0], (n, 1)), np.full(n, -1))

    rng = np.random.default_rng(seed)
    lattice = board_lattice(config)
    quotas = {FAR: config.far_quota, NEAR: config.near_quota}
    counts = np.zeros(len(rig))
    boards = []
    while True:
        if len(boards) >= MAX_BOARDS:
            raise QuotaUnreachable(f"{MAX_BOARDS} boards do not meet the observation quotas {quotas}")
        pts, normal = _place_board(config, lattice, rng)
        normals = np.tile(normal, (len(pts), 1))
        counts += visibility_matrix(rig, pts, normals).sum(axis=1)
        boards.append((pts, normals))
        means = _class_means(rig, counts)
        if all(means[c] >= quotas[c] for c in means):
            break
    logger.info("%s: %d boards, class means %s", config.scenario.value, len(boards), means)
    xyz = np.vstack([b[0] for b in boards])
    normals = np.vstack([b[1] for b in boards])
    board_ids = np.repeat(np.arange(len(boards)), len(lattice))
    return ScenePoints(np.arange(len(xyz)), xyz, normals, board_ids)


def marker_footprints(centers, marker_size, scales):
    """Floor corners of every marker at every scale: (S, N, 4, 3)."""
    centers = np.asarray(centers, dtype=float)
    half = 0.5 * marker_size * np.asarray(scales, dtype=float)
    offsets = np.array([[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [1.0, 1.0, 0.0], [-1.0, 1.0, 0.0]])
    return centers[None, :, None, :] + half[:, None, None, None] * offsets[None, None, :, :]


def imaged_diameters(intrinsics, pose, centers, marker_size, scales, full_quad=True):
    """Imaged marker diameter sqrt(quad area) per (scale, marker); NaN where not imaged."""
    corners = marker_footprints(centers, marker_size, scales)
    uv, z = project_with_depth(intrinsics, pose, corners)
    ok = np.all(z > 0, axis=-1)
    if full_quad:
        ok &= np.all(intrinsics.contains(uv), axis=-1)
    x, y = uv[..., 0], uv[..., 1]
    area = 0.5 * np.abs(
        np.sum(x * np.roll(y, -1, axis=-1) - np.roll(x, -1, axis=-1) * y, axis=-1)
    )
    return np.where(ok, np.sqrt(area), np.nan)


def detectable_scales(intrinsics, pose, centers, marker_size, scales, visibility):
    """(S, N) flags: scale s of marker n images inside the detectable diameter range."""
    d = imaged_diameters(intrinsics, pose, centers, marker_size, scales, visibility.full_quad)
    with np.errstate(invalid="ignore"):
        return (d >= visibility.min_diameter) & (d <= visibility.max_diameter)


def visibility_matrix(rig, xyz, normals, visibility=None, marker_size=None, scales=None):
    """(cameras, points) flags: positive depth, inside the image, front face toward the camera.

    With `visibility` set the points are marker centers and must also be
    detectable at one scale at least.
    """
    xyz = np.asarray(xyz, dtype=float)
    out = np.zeros((len(rig), len(xyz)), dtype=bool)
    for i, cam in enumerate(rig):
        uv, z = project_with_depth(cam.intrinsics, cam.pose, xyz)
        facing = np.einsum("ij,ij->i", normals, cam.pose.center - xyz) > 0
        with np.errstate(invalid="ignore"):
            seen = (z > 0) & cam.intrinsics.contains(uv) & facing
        if visibility is not None:
            seen &= detectable_scales(cam.intrinsics, cam.pose, xyz, marker_size, scales, visibility).any(axis=0)
        out[i] = seen
    return out


def simulate_observations(rig, points, sigma, visibility=None, scenario=Scenario.GRID_FLOOR, seed=0, marker_size=0.05, scales=DEFAULT_SCALES):
    """Noisy pixel observations of every visible point.

    Marker gating applies to the floor grid only, and only when `visibility` is given.
    """
    if not sigma >= 0:
        raise ConfigError(f"noise sigma must be >= 0, got {sigma}")
    scenario = Scenario(scenario)
    gating = visibility if scenario is Scenario.GRID_FLOOR else None
    seen = visibility_matrix(rig, points.xyz, points.normals, gating, marker_size, scales)
    rng = np.random.default_rng(seed)
    cams, pids, uvs = [], [], []
    for i, cam in enumerate(rig):
        idx = np.flatnonzero(seen[i])
        uv, _ = project_with_depth(cam.intrinsics, cam.pose, points.xyz[idx])
        uv = uv + sigma * rng.standard_normal(uv.shape)
        cams.append(np.full(len(idx), cam.camera_id))
        pids.append(points.point_ids[idx])
        uvs.append(uv)
    return ObservationSet(np.concatenate(cams), np.concatenate(pids), np.vstack(uvs))


def thin_to_quotas(observations, rig, quotas, rng):
    """Drop observations of an over-quota camera class at random, down to the quota on average."""
    counts = np.array([np.sum(observations.camera_ids == cam.camera_id) for cam in rig], dtype=float)
    means = _class_means(rig, counts)
    keep = np.ones(len(observations), dtype=bool)
    draws = rng.uniform(size=len(observations))
    for category, mean in means.items():
        if mean <= quotas[category]:
            continue
        ids = [cam.camera_id for cam in rig if cam.category == category]
        in_class = np.isin(observations.camera_ids, ids)
        keep &= ~in_class | (draws < quotas[category] / mean)
    return observations.subset(keep)


def simulate_heldout(config, rig, sigma, seed=0):
    """Independent floor points inside the grid footprint, observed without marker gating."""
    rng_points, rng_noise = _seed_streams(seed, 2)
    n = config.heldout_count
    xyz = np.column_stack(
        (
            rng_points.uniform(-config.grid_width / 2, config.grid_width / 2, n),
            rng_points.uniform(-config.grid_depth / 2, config.grid_depth / 2, n),
            np.zeros(n),
        )
    )
    points = ScenePoints(np.arange(n), xyz, np.tile([0.0, 0.0, 1.0], (n, 1)), np.full(n, -1))
    seen = visibility_matrix(rig, xyz, points.normals)
    cams, pids, uvs = [], [], []
    for i, cam in enumerate(rig):
        idx = np.flatnonzero(seen[i])
        uv, _ = project_with_depth(cam.intrinsics, cam.pose, xyz[idx])
        uvs.append(uv + sigma * rng_noise.standard_normal(uv.shape))
        cams.append(np.full(len(idx), cam.camera_id))
        pids.append(idx)
    return points, ObservationSet(np.concatenate(cams), np.concatenate(pids), np.vstack(uvs))


def simulate_scene(config, seed=0, heldout=False):
    """Rig, points and observations for one trial; identical (config, seed) give identical scenes."""
    rng_rig, rng_points, rng_noise, rng_thin, rng_heldout = _seed_streams(seed, 5)
    rig = sample_rig(config, rng_rig)
    points = sample_points(config, rig, rng_points)
    observations = simulate_observations(
        rig,
        points,
        config.sigma,
        config.visibility if config.msm_gating else None,
        config.scenario,
        rng_noise,
        config.marker_size,
        config.scales,
    )
    if config.scenario.uses_boards:
        quotas = {FAR: config.far_quota, NEAR: config.near_quota}
        observations = thin_to_quotas(observations, rig, quotas, rng_thin)
    heldout_points = heldout_obs = None
    if heldout:
        heldout_points, heldout_obs = simulate_heldout(config, rig, config.sigma, rng_heldout)
    logger.info(
        "scene %s seed=%d: %d cameras, %d points, %d observations",
        config.scenario.value,
        seed,
        len(rig),
        len(points),
        len(observations),
    )
    return SyntheticScene(config, rig, points, observations, config.sigma, seed, heldout_points, heldout_obs)


def simulate_detections(scene, schedule, sigma=None, seed=0):
    """Per-scale corner detections of the floor markers of a GridFloor scene.

    Each camera reports every scale of a marker that it can detect, with
    independent N(0, sigma^2) noise on every corner coordinate.
    """
    config = scene.config
    if config.scenario is not Scenario.GRID_FLOOR:
        raise ShapeMismatch("detections are simulated for the floor grid only")
    sigma = scene.sigma if sigma is None else sigma
    centers = schedule.marker_centers()
    if sorted(centers) != list(range(len(scene.points))):
        raise ShapeMismatch(
            f"schedule projects {len(centers)} markers but the floor grid has {len(scene.points)} nodes"
        )
    scales = schedule.scales.values
    array_of = {}
    for step in schedule.steps:
        for marker_id in step.marker_ids:
            array_of[marker_id] = step.array_id
    rng = np.random.default_rng(seed)
    visibility = config.visibility
    detections = []
    for cam in scene.rig:
        if config.msm_gating:
            ok = detectable_scales(cam.intrinsics, cam.pose, scene.points.xyz, config.marker_size, scales, visibility)
        else:
            center_uv, z = project_with_depth(cam.intrinsics, cam.pose, scene.points.xyz)
            seen = (z > 0) & cam.intrinsics.contains(center_uv)
            ok = np.broadcast_to(seen, (len(scales), len(seen)))
        corners = marker_footprints(scene.points.xyz, config.marker_size, scales)
        uv, _ = project_with_depth(cam.intrinsics, cam.pose, corners)
        for scale_index, marker_index in zip(*np.nonzero(ok)):
            marker_id = int(scene.points.point_ids[marker_index])
            noisy = uv[scale_index, marker_index] + sigma * rng.standard_normal((4, 2))
            detections.append(
                Detection(
                    cam.camera_id,
                    array_of[marker_id] * len(scales) + int(scale_index),
                    marker_id,
                    int(scale_index),
                    corners=noisy,
                )
            )
    logger.info("simulated %d detections over %d cameras", len(detections), len(scene.rig))
    return detections


# Monte-Carlo


def _run_trial(task):
    # imported here so that worker processes only pay for it when used
    from .evaluation import pose_errors, umeyama_align
    from .solver import calibrate

    config, trial, seed, options = task
    row = {
        "scenario": config.scenario.value,
        "sigma": config.sigma,
        "trial": trial,
        "seed": seed,
        "rot_rmse_deg": np.nan,
        "trans_rmse": np.nan,
        "mean_reproj_px": np.nan,
        "registered": 0,
        "cameras": 0,
        "success": False,
    }
    try:
        scene = simulate_scene(config, seed)
        row["cameras"] = len(scene.rig)
        recon = calibrate(scene.observations, scene.rig.intrinsics(), options)
        estimated = recon.camera_poses()
        truth = {cid: scene.rig[cid].pose for cid in estimated}
        ids = sorted(estimated)
        alignment = umeyama_align(
            np.array([estimated[c].center for c in ids]), np.array([truth[c].center for c in ids])
        )
        rot, trans = pose_errors(estimated, truth, alignment)
        row.update(
            rot_rmse_deg=rot,
            trans_rmse=trans,
            mean_reproj_px=recon.reprojection_rms(),
            registered=len(estimated),
            success=len(estimated) == len(scene.rig),
        )
    except CalibrationError as e:
        logger.warning("trial %d (%s, sigma=%g) failed: %s", trial, config.scenario.value, config.sigma, e)
    return row


def run_monte_carlo(config, sigmas=DEFAULT_SIGMAS, trials=1, scenarios=None, base_seed=0, threads=1, options=None):
    """Sample, simulate, calibrate and evaluate every (scenario, sigma, trial).

    Trial `i` uses seed `base_seed + i` for every scenario and sigma, so the
    noise levels share geometry and noise directions.
    """
    from .solver import SolverOptions

    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    scenarios = [Scenario(s) for s in (scenarios or [config.scenario])]
    options = options or SolverOptions()
    tasks = [
        (replace(config, scenario=scenario, sigma=float(sigma)), trial, base_seed + trial, options)
        for scenario in scenarios
        for sigma in sigmas
        for trial in range(trials)
    ]
    logger.info("Monte-Carlo: %d tasks on %d worker(s)", len(tasks), threads)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_run_trial, tasks))
    else:
        rows = [_run_trial(task) for task in tasks]
    columns = [
        "scenario", "sigma", "trial", "seed", "rot_rmse_deg", "trans_rmse",
        "mean_reproj_px", "registered", "cameras", "success",
    ]
    frame = pd.DataFrame(rows, columns=columns)
    return frame.sort_values(["scenario", "sigma", "trial"], kind="stable").reset_index(drop=True)


def summarize_monte_carlo(report):
    """Mean and std of the pose errors per (scenario, sigma), plus the success rate."""
    summary = report.groupby(["scenario", "sigma"], sort=True).agg(
        trials=("trial", "count"),
        rot_rmse_deg_mean=("rot_rmse_deg", "mean"),
        rot_rmse_deg_std=("rot_rmse_deg", "std"),
        trans_rmse_mean=("trans_rmse", "mean"),
        trans_rmse_std=("trans_rmse", "std"),
        mean_reproj_px=("mean_reproj_px", "mean"),
        success_rate=("success", "mean"),
    )
    return summary.reset_index()
