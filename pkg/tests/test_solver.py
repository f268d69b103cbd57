"""Tests for the incremental calibration pipeline."""

from dataclasses import replace

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from msmcalib.errors import ConfigError, InitializationFailed, NoRegistrableCamera, NoValidPair
from msmcalib.evaluation import pose_errors
from msmcalib.geometry import Camera, CameraIntrinsics, CameraRig, Pose, look_at, project_with_depth
from msmcalib.msm import ObservationSet
from msmcalib.simulator import ScenarioConfig, ScenePoints, floor_grid, simulate_observations, simulate_scene
from msmcalib.solver import (
    CorrespondenceGraph,
    Reconstruction,
    SolverOptions,
    bundle_adjust,
    calibrate,
    compute_view_score,
    initialize_pair,
    rank_initial_pairs,
    register_next_camera,
    select_initial_pair,
    triangulate_tracks,
)

DOWN = np.diag([1.0, -1.0, -1.0])


def angle(Ra, Rb):
    return Rotation.from_matrix(Ra @ Rb.T).magnitude()


def relative(rig, a, b):
    Ra, Rb = rig[a].pose.R, rig[b].pose.R
    R = Rb @ Ra.T
    return R, rig[b].pose.translation - R @ rig[a].pose.translation


def overhead_rig(azimuths_deg=()):
    """Two downward cameras 1 m apart at 2.5 m, plus oblique cameras on a 2.8 m circle."""
    intr = CameraIntrinsics.from_focal(915.0)
    cameras = [
        Camera(0, intr, Pose.from_matrix(DOWN, -DOWN @ [-0.5, 0.0, 2.5])),
        Camera(1, intr, Pose.from_matrix(DOWN, -DOWN @ [0.5, 0.0, 2.5])),
    ]
    for i, az in enumerate(np.radians(azimuths_deg)):
        center = (2.8 * np.cos(az), 2.8 * np.sin(az), 2.8)
        cameras.append(Camera(i + 2, intr, look_at(center, (0.0, 0.0, 0.0))))
    return CameraRig(tuple(cameras))


def floor_observations(rig, rows=20, cols=40):
    xyz = floor_grid(ScenarioConfig(grid_rows=rows, grid_cols=cols))
    n = len(xyz)
    points = ScenePoints(np.arange(n), xyz, np.tile([0.0, 0.0, 1.0], (n, 1)), np.full(n, -1))
    return simulate_observations(rig, points, 0.0)


def brute_force_score(uv, width, height, levels=3):
    score = 0
    for level in range(1, levels + 1):
        n = 2**level
        cells = {(min(int(u * n // width), n - 1), min(int(v * n // height), n - 1)) for u, v in uv}
        score += len(cells) * n
    return score


class TestViewScore:
    def test_empty_and_single_point(self):
        assert compute_view_score(np.zeros((0, 2)), 1920, 1080) == 0
        assert compute_view_score([[10.0, 10.0]], 1920, 1080) == 2 + 4 + 8

    def test_full_coverage(self):
        u, v = np.meshgrid(np.linspace(5, 1915, 64), np.linspace(5, 1075, 64))
        uv = np.column_stack((u.ravel(), v.ravel()))
        assert compute_view_score(uv, 1920, 1080) == 4 * 2 + 16 * 4 + 64 * 8

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        uv = rng.uniform((0, 0), (1920, 1080), (1000, 2))
        assert compute_view_score(uv, 1920, 1080) == brute_force_score(uv, 1920, 1080)

    def test_spread_beats_clustering(self):
        rng = np.random.default_rng(1)
        spread = rng.uniform((0, 0), (1920, 1080), (100, 2))
        cluster = rng.uniform((900, 500), (1000, 560), (1000, 2))
        assert compute_view_score(spread, 1920, 1080) > compute_view_score(cluster, 1920, 1080)

    def test_invalid_image(self):
        with pytest.raises(ConfigError):
            compute_view_score([[1.0, 1.0]], 0, 1080)


class TestPairSelection:
    def test_well_spread_pair_wins(self):
        rng = np.random.default_rng(2)
        intr = {c: CameraIntrinsics.from_focal(915.0) for c in range(4)}
        spread = rng.uniform((0, 0), (1900, 1060), (200, 2))
        cluster = rng.uniform((900, 500), (960, 540), (600, 2))
        cams = np.repeat([0, 1, 2, 3], [200, 200, 600, 600])
        pids = np.concatenate((np.arange(200), np.arange(200), 1000 + np.arange(600), 1000 + np.arange(600)))
        uv = np.vstack((spread, spread + 1.0, cluster, cluster + 1.0))
        graph = CorrespondenceGraph(ObservationSet(cams, pids, uv), intr)
        assert select_initial_pair(graph) == (0, 1)
        assert rank_initial_pairs(graph) == [(0, 1), (2, 3)]

    def test_ties_go_to_the_smallest_ids(self):
        rng = np.random.default_rng(3)
        uv = rng.uniform((0, 0), (1920, 1080), (100, 2))
        intr = {c: CameraIntrinsics.from_focal(915.0) for c in range(3)}
        obs = ObservationSet(np.repeat([0, 1, 2], 100), np.tile(np.arange(100), 3), np.tile(uv, (3, 1)))
        assert select_initial_pair(CorrespondenceGraph(obs, intr)) == (0, 1)

    def test_single_camera(self):
        intr = {0: CameraIntrinsics.from_focal(915.0)}
        obs = ObservationSet(np.zeros(60, dtype=int), np.arange(60), np.full((60, 2), 100.0))
        with pytest.raises(NoValidPair):
            select_initial_pair(CorrespondenceGraph(obs, intr))

    def test_too_few_shared_correspondences(self):
        intr = {c: CameraIntrinsics.from_focal(915.0) for c in range(2)}
        obs = ObservationSet([0] * 49 + [1] * 49, list(range(49)) * 2, np.full((98, 2), 100.0))
        with pytest.raises(NoValidPair):
            select_initial_pair(CorrespondenceGraph(obs, intr))


class TestInitialization:
    def test_relative_pose_of_a_planar_pair(self):
        rig = overhead_rig()
        graph = CorrespondenceGraph(floor_observations(rig), rig.intrinsics())
        recon = initialize_pair(graph, (0, 1))
        R, t = relative(rig, 0, 1)
        np.testing.assert_allclose(recon.poses[0].matrix, np.hstack((np.eye(3), np.zeros((3, 1)))), atol=1e-12)
        assert angle(recon.poses[1].R, R) < 1e-6
        np.testing.assert_allclose(recon.poses[1].translation, t / np.linalg.norm(t), atol=1e-6)
        assert (recon.reference, recon.baseline) == (0, 1)
        assert len(recon.points) == graph.shared_count(0, 1)

    def test_points_are_in_the_pair_frame(self):
        # the baseline is 1 m, so the pair frame is camera 0 at metric scale
        rig = overhead_rig()
        graph = CorrespondenceGraph(floor_observations(rig), rig.intrinsics())
        recon = initialize_pair(graph, (0, 1))
        xyz = floor_grid(ScenarioConfig(grid_rows=20, grid_cols=40))
        ids, points = recon.point_array()
        np.testing.assert_allclose(points, rig[0].pose.transform(xyz[ids]), atol=1e-6)

    def test_outliers_do_not_prevent_initialization(self):
        rig = overhead_rig()
        obs = floor_observations(rig)
        rng = np.random.default_rng(4)
        uv = obs.uv.copy()
        rows = np.flatnonzero(obs.camera_ids == 1)
        outliers = rng.choice(rows, int(0.3 * len(rows)), replace=False)
        uv[outliers] = rng.uniform((0, 0), (1920, 1080), (len(outliers), 2))
        graph = CorrespondenceGraph(ObservationSet(obs.camera_ids, obs.point_ids, uv), rig.intrinsics())
        recon = initialize_pair(graph, (0, 1))
        assert len(recon.points) >= 0.95 * (graph.shared_count(0, 1) - len(outliers))
        R, _ = relative(rig, 0, 1)
        assert angle(recon.poses[1].R, R) < 1e-3

    def test_collinear_correspondences(self):
        intr = {c: CameraIntrinsics.from_focal(915.0) for c in range(2)}
        u = np.linspace(100.0, 1800.0, 60)
        line_a = np.column_stack((u, np.full(60, 500.0)))
        line_b = np.column_stack((u * 0.9 + 50.0, np.full(60, 520.0)))
        obs = ObservationSet(np.repeat([0, 1], 60), np.tile(np.arange(60), 2), np.vstack((line_a, line_b)))
        with pytest.raises(InitializationFailed):
            initialize_pair(CorrespondenceGraph(obs, intr), (0, 1))


class TestRegistration:
    @pytest.fixture
    def started(self):
        rig = overhead_rig([0.0, 120.0])
        graph = CorrespondenceGraph(floor_observations(rig), rig.intrinsics())
        return rig, graph, initialize_pair(graph, (0, 1))

    def test_next_camera_is_localized(self, started):
        rig, graph, recon = started
        c = register_next_camera(recon, graph)
        assert c in (2, 3)
        expected = rig[c].pose.R @ rig[0].pose.R.T
        assert angle(recon.poses[c].R, expected) < 1e-6
        assert recon.registration_order == [0, 1, c]

    def test_well_covered_camera_goes_first(self, started):
        rig, graph, recon = started
        obs = graph.observations
        keep = obs.camera_ids != 3
        keep[np.flatnonzero(obs.camera_ids == 3)[:20]] = True
        graph = CorrespondenceGraph(obs.subset(keep), rig.intrinsics())
        assert register_next_camera(recon, graph) == 2

    def test_failed_camera_waits_for_the_next_registration(self, started):
        rig, graph, recon = started
        failed = {2: len(recon.poses), 3: len(recon.poses)}
        with pytest.raises(NoRegistrableCamera):
            register_next_camera(recon, graph, failed=failed)
        failed[3] = len(recon.poses) - 1
        assert register_next_camera(recon, graph, failed=failed) == 3
        # a new camera is in, so camera 2 gets another attempt
        assert register_next_camera(recon, graph, failed=failed) == 2

    def test_nothing_to_register(self):
        rig = overhead_rig()
        graph = CorrespondenceGraph(floor_observations(rig), rig.intrinsics())
        recon = initialize_pair(graph, (0, 1))
        with pytest.raises(NoRegistrableCamera):
            register_next_camera(recon, graph)

    def test_tracks_seen_twice_are_triangulated(self, started):
        rig, graph, recon = started
        register_next_camera(recon, graph)
        triangulate_tracks(recon, graph)
        _, residual = recon.inlier_rows()
        assert np.abs(residual).max() < 1e-6
        registered = set(recon.poses)
        obs = graph.observations
        seen_twice = {
            pid for pid, rows in graph.tracks.items() if len(registered & set(obs.camera_ids[rows].tolist())) >= 2
        }
        assert set(recon.points) == seen_twice

    def test_single_observation_tracks_stay_untriangulated(self):
        rig = overhead_rig()
        obs = floor_observations(rig)
        extra = ObservationSet(
            np.concatenate((obs.camera_ids, [0])),
            np.concatenate((obs.point_ids, [99_999])),
            np.vstack((obs.uv, [[960.0, 540.0]])),
        )
        graph = CorrespondenceGraph(extra, rig.intrinsics())
        recon = initialize_pair(graph, (0, 1))
        assert triangulate_tracks(recon, graph) == 0
        assert 99_999 not in recon.points


def test_bundle_adjustment_reaches_the_noise_floor(small_config):
    scene = simulate_scene(replace(small_config, sigma=0.3), seed=21)
    rng = np.random.default_rng(6)
    recon = Reconstruction(scene.observations, scene.rig.intrinsics(), reference=0, baseline=1)
    for cam in scene.rig:
        pose = cam.pose
        if cam.camera_id > 1:
            rotation = Rotation.from_rotvec(rng.normal(0.0, np.radians(0.05), 3)) * pose.rotation
            pose = Pose.from_rotation(rotation, pose.translation * (1.0 + rng.normal(0.0, 5e-4, 3)))
        recon.add_camera(cam.camera_id, pose)
    for pid, xyz in zip(scene.points.point_ids, scene.points.xyz):
        recon.set_point(pid, xyz)
    bundle_adjust(recon, SolverOptions(), mode="global")

    rows, _ = recon.inlier_rows()
    m = 2 * len(rows)
    p = 6 * (len(scene.rig) - 2) + 5 + 3 * len(recon.points)
    rms = recon.reprojection_rms()
    assert 0.25 <= rms <= 0.35
    assert rms == pytest.approx(0.3 * np.sqrt(1.0 - p / m), rel=0.05)


class TestCalibrate:
    def test_zero_noise_grid_floor(self, grid_scene, grid_recon):
        assert grid_recon.unregistered() == []
        rot, trans = pose_errors(grid_recon.camera_poses(), grid_scene.rig)
        assert rot < 1e-5
        assert trans < 1e-6
        assert grid_recon.reprojection_rms() < 1e-6

    def test_gauge(self, grid_recon):
        reference, baseline = grid_recon.reference, grid_recon.baseline
        np.testing.assert_allclose(grid_recon.poses[reference].R, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(grid_recon.poses[reference].translation, 0.0, atol=1e-12)
        assert np.linalg.norm(grid_recon.poses[baseline].translation) == pytest.approx(1.0, abs=1e-9)

    def test_solved_points_reproject_onto_their_observations(self, grid_scene, grid_recon):
        rows, _ = grid_recon.inlier_rows()
        obs = grid_scene.observations
        for row in rows[:: max(1, len(rows) // 50)]:
            c, pid = int(obs.camera_ids[row]), int(obs.point_ids[row])
            uv, z = project_with_depth(grid_recon.intrinsics[c], grid_recon.poses[c], grid_recon.points[pid])
            assert z > 0
            np.testing.assert_allclose(uv, obs.uv[row], atol=1e-6)

    def test_noisy_calibration(self, noisy_scene):
        recon = calibrate(noisy_scene.observations, noisy_scene.rig.intrinsics())
        assert recon.unregistered() == []
        rot, _ = pose_errors(recon.camera_poses(), noisy_scene.rig)
        assert rot < 0.1
        assert 0.2 < recon.reprojection_rms() < 0.35

    def test_is_deterministic(self, small_config):
        scene = simulate_scene(replace(small_config, sigma=0.2, far_count=3, near_count=1), seed=8)
        a = calibrate(scene.observations, scene.rig.intrinsics())
        b = calibrate(scene.observations, scene.rig.intrinsics())
        assert sorted(a.poses) == sorted(b.poses)
        for c in a.poses:
            np.testing.assert_array_equal(a.poses[c].matrix, b.poses[c].matrix)

    def test_two_cameras(self):
        rig = overhead_rig()
        recon = calibrate(floor_observations(rig), rig.intrinsics())
        R, t = relative(rig, 0, 1)
        assert angle(recon.poses[1].R, R) < 1e-6
        np.testing.assert_allclose(recon.poses[1].translation, t / np.linalg.norm(t), atol=1e-6)

    def test_camera_without_observations_is_reported(self):
        rig = overhead_rig([150.0])
        intrinsics = rig.intrinsics()
        intrinsics[7] = CameraIntrinsics.from_focal(915.0)
        recon = calibrate(floor_observations(rig), intrinsics)
        assert recon.unregistered() == [7]
        assert sorted(recon.poses) == [0, 1, 2]
        table = recon.camera_table().set_index("camera_id")
        assert not table.loc[7, "registered"]
        assert table.loc[7, "observations"] == 0

    def test_coplanar_mode(self):
        rig = overhead_rig([150.0])
        recon = calibrate(floor_observations(rig), rig.intrinsics(), SolverOptions(coplanar=True))
        _, xyz = recon.point_array()
        assert np.abs(recon.plane.distance(xyz)).max() < 1e-9
        rot, trans = pose_errors(recon.camera_poses(), rig)
        assert rot < 1e-5
        assert trans < 1e-6

    def test_no_valid_pair(self):
        intr = {c: CameraIntrinsics.from_focal(915.0) for c in range(2)}
        obs = ObservationSet([0, 1], [0, 1], np.full((2, 2), 100.0))
        with pytest.raises(InitializationFailed):
            calibrate(obs, intr)

    def test_result_is_frozen(self, grid_recon):
        with pytest.raises(RuntimeError):
            grid_recon.set_point(0, [0.0, 0.0, 0.0])
