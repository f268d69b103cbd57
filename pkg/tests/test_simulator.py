"""Tests for the synthetic rig, point and observation generators."""

from dataclasses import replace

import numpy as np
import pytest

from msmcalib.errors import ConfigError, ShapeMismatch
from msmcalib.geometry import Camera, CameraIntrinsics, CameraRig, Pose, project_with_depth
from msmcalib.msm import ProjectorGrid, fuse_detections, generate_schedule
from msmcalib.simulator import (
    FAR,
    NEAR,
    Scenario,
    ScenarioConfig,
    ScenePoints,
    VisibilityModel,
    detectable_scales,
    sample_rig,
    simulate_detections,
    simulate_observations,
    simulate_scene,
)


@pytest.fixture(scope="module")
def volume_scene():
    return simulate_scene(ScenarioConfig(scenario=Scenario.BOARD_VOLUME), seed=3)


@pytest.fixture(scope="module")
def floor_scene():
    return simulate_scene(ScenarioConfig(scenario=Scenario.BOARD_FLOOR), seed=3)


def exact_pixels(scene):
    uv = np.empty_like(scene.observations.uv)
    for cam in scene.rig:
        sel = scene.observations.camera_ids == cam.camera_id
        X = scene.points.position(scene.observations.point_ids[sel])
        uv[sel], _ = project_with_depth(cam.intrinsics, cam.pose, X)
    return uv


def class_means(scene):
    means = {}
    for category in (FAR, NEAR):
        ids = [c.camera_id for c in scene.rig if c.category == category]
        means[category] = np.mean([np.sum(scene.observations.camera_ids == c) for c in ids])
    return means


class TestRig:
    def test_layout(self):
        rig = sample_rig(ScenarioConfig(closeup=True), seed=0)
        assert rig.ids == list(range(11))
        categories = rig.categories()
        assert [categories[c] for c in range(6)] == [FAR] * 6
        assert [categories[c] for c in range(6, 10)] == [NEAR] * 4
        assert rig[10].intrinsics.fx == pytest.approx(11_100.0)
        for cam in rig:
            center = cam.pose.center
            radius, height = (2.8, 2.8) if cam.category != NEAR else (1.2, 1.4)
            assert np.hypot(center[0], center[1]) == pytest.approx(radius, abs=1e-12)
            assert center[2] == pytest.approx(height, abs=1e-12)
            forward = cam.pose.R[2]
            np.testing.assert_allclose(forward, -center / np.linalg.norm(center), atol=1e-12)

    def test_seed_changes_azimuths(self):
        a = sample_rig(ScenarioConfig(), seed=0)
        b = sample_rig(ScenarioConfig(), seed=1)
        assert not np.allclose(a[0].pose.center, b[0].pose.center)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(far_count=0, near_count=0)
        with pytest.raises(ConfigError):
            ScenarioConfig(sigma=-0.1)


class TestPoints:
    def test_grid_floor(self, grid_scene):
        assert len(grid_scene.points) == 3200
        np.testing.assert_array_equal(grid_scene.points.point_ids, np.arange(3200))
        assert np.all(grid_scene.points.xyz[:, 2] == 0.0)
        assert np.abs(grid_scene.points.xyz[:, 0]).max() == pytest.approx(2.0)
        assert np.abs(grid_scene.points.xyz[:, 1]).max() == pytest.approx(1.5)

    def test_board_floor_points_lie_in_the_disc(self, floor_scene):
        xyz = floor_scene.points.xyz
        assert np.all(xyz[:, 2] == 0.0)
        assert np.all(np.hypot(xyz[:, 0], xyz[:, 1]) <= 3.0 + 1e-12)

    def test_board_volume_points_lie_in_the_cylinder(self, volume_scene):
        xyz = volume_scene.points.xyz
        assert np.all(np.hypot(xyz[:, 0], xyz[:, 1]) <= 3.0 + 1e-12)
        assert np.all((xyz[:, 2] >= -1e-12) & (xyz[:, 2] <= 1.5 + 1e-12))

    @pytest.mark.parametrize("name", ["volume_scene", "floor_scene"])
    def test_quotas(self, name, request):
        means = class_means(request.getfixturevalue(name))
        assert means[FAR] == pytest.approx(3000, rel=0.1)
        assert means[NEAR] == pytest.approx(2000, rel=0.1)

    def test_volume_tracks_are_shorter(self, volume_scene, floor_scene):
        assert volume_scene.observations.track_lengths().mean() < floor_scene.observations.track_lengths().mean()


class TestObservations:
    def test_zero_noise_is_exact(self, grid_scene):
        np.testing.assert_allclose(grid_scene.observations.uv, exact_pixels(grid_scene), atol=1e-9)

    def test_noise_level(self):
        config = ScenarioConfig()
        rig = sample_rig(config, seed=5)
        rng = np.random.default_rng(5)
        n = 20_000
        xyz = np.column_stack((rng.uniform(-1.0, 1.0, (n, 2)), np.zeros(n)))
        points = ScenePoints(np.arange(n), xyz, np.tile([0.0, 0.0, 1.0], (n, 1)), np.full(n, -1))
        noisy = simulate_observations(rig, points, 0.5, seed=9)
        exact = simulate_observations(rig, points, 0.0, seed=9)
        assert len(noisy) >= 10_000
        np.testing.assert_array_equal(noisy.point_ids, exact.point_ids)
        residual = noisy.uv - exact.uv
        assert residual.std(axis=0) == pytest.approx([0.5, 0.5], abs=0.02)
        assert np.abs(residual.mean(axis=0)).max() < 0.02

    def test_negative_noise_is_rejected(self, grid_scene):
        with pytest.raises(ConfigError):
            simulate_observations(grid_scene.rig, grid_scene.points, -1.0)

    def test_same_seed_same_scene(self):
        config = ScenarioConfig(sigma=0.3, grid_rows=10, grid_cols=20)
        a, b = simulate_scene(config, seed=4), simulate_scene(config, seed=4)
        np.testing.assert_array_equal(a.observations.uv, b.observations.uv)
        np.testing.assert_array_equal(a.observations.camera_ids, b.observations.camera_ids)
        c = simulate_scene(config, seed=5)
        assert len(c.observations) != len(a.observations) or not np.array_equal(c.observations.uv, a.observations.uv)

    def test_heldout_points_are_independent(self, noisy_scene):
        assert noisy_scene.heldout is not None
        assert len(noisy_scene.heldout_points) == 1000
        assert not np.allclose(noisy_scene.heldout_points.xyz[:10], noisy_scene.points.xyz[:10])

    def test_heldout_simulation_is_reproducible(self):
        config = ScenarioConfig(grid_rows=10, grid_cols=20, sigma=0.3)
        a = simulate_scene(config, seed=11, heldout=True)
        b = simulate_scene(config, seed=11, heldout=True)
        plain = simulate_scene(config, seed=11)
        np.testing.assert_array_equal(a.heldout.uv, b.heldout.uv)
        np.testing.assert_array_equal(a.heldout_points.xyz, b.heldout_points.xyz)
        np.testing.assert_array_equal(a.observations.uv, plain.observations.uv)


class TestMarkerGating:
    @pytest.fixture
    def overhead(self):
        # 4 m above the floor, looking straight down
        R = np.diag([1.0, -1.0, -1.0])
        pose = Pose.from_matrix(R, -R @ [0.0, 0.0, 4.0])
        return CameraIntrinsics.from_focal(915.0), pose

    def test_small_scale_is_too_small_at_four_meters(self, overhead):
        intr, pose = overhead
        ok = detectable_scales(intr, pose, np.zeros((1, 3)), 0.05, (1.0, 2.0, 8.0), VisibilityModel())
        np.testing.assert_array_equal(ok[:, 0], [False, True, True])

    def test_upper_diameter_bound(self, overhead):
        intr, pose = overhead
        ok = detectable_scales(intr, pose, np.zeros((1, 3)), 0.05, (8.0,), VisibilityModel(20.0, 50.0))
        assert not ok[0, 0]

    def test_gating_only_removes_observations(self):
        config = ScenarioConfig(grid_rows=10, grid_cols=20)
        gated = simulate_scene(config, seed=2)
        ungated = simulate_scene(replace(config, msm_gating=False), seed=2)
        assert len(gated.observations) <= len(ungated.observations)
        pairs = set(zip(ungated.observations.camera_ids.tolist(), ungated.observations.point_ids.tolist()))
        assert set(zip(gated.observations.camera_ids.tolist(), gated.observations.point_ids.tolist())) <= pairs


@pytest.fixture(scope="module")
def scene_and_schedule():
    config = ScenarioConfig(grid_rows=10, grid_cols=20)
    schedule = generate_schedule(ProjectorGrid(10, 20), 10, 20)
    return simulate_scene(config, seed=1), schedule


class TestDetections:
    def test_zero_noise_detections_fuse_to_projections(self, scene_and_schedule):
        scene, schedule = scene_and_schedule
        detections = simulate_detections(scene, schedule, sigma=0.0)
        assert detections
        fused = fuse_detections(detections, schedule)
        for cam in scene.rig:
            sel = fused.camera_ids == cam.camera_id
            uv, _ = project_with_depth(cam.intrinsics, cam.pose, scene.points.position(fused.point_ids[sel]))
            np.testing.assert_allclose(fused.uv[sel], uv, atol=1e-9)

    def test_noisy_detections_stay_close(self, scene_and_schedule):
        scene, schedule = scene_and_schedule
        fused = fuse_detections(simulate_detections(scene, schedule, sigma=0.2, seed=3), schedule)
        errors = []
        for cam in scene.rig:
            sel = fused.camera_ids == cam.camera_id
            uv, _ = project_with_depth(cam.intrinsics, cam.pose, scene.points.position(fused.point_ids[sel]))
            errors.append(np.linalg.norm(fused.uv[sel] - uv, axis=1))
        assert np.mean(np.concatenate(errors)) < 0.2

    def test_step_ids_belong_to_the_schedule(self, scene_and_schedule):
        scene, schedule = scene_and_schedule
        for det in simulate_detections(scene, schedule, sigma=0.0)[:200]:
            step = schedule.step(det.step_id)
            assert det.marker_id in step.marker_ids
            assert step.scale_index == det.scale_index

    def test_schedule_must_match_the_grid(self, scene_and_schedule):
        scene, _ = scene_and_schedule
        with pytest.raises(ShapeMismatch):
            simulate_detections(scene, generate_schedule(ProjectorGrid(2, 2), 2, 2))

    def test_board_scenes_have_no_detections(self, floor_scene, scene_and_schedule):
        _, schedule = scene_and_schedule
        with pytest.raises(ShapeMismatch):
            simulate_detections(floor_scene, schedule)


def test_camera_rig_rejects_duplicate_ids():
    intr = CameraIntrinsics.from_focal(915.0)
    cam = Camera(0, intr, Pose.identity())
    with pytest.raises(ConfigError):
        CameraRig((cam, cam))
