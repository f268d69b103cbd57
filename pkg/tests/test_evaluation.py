"""Tests for alignment, pose errors, held-out reprojection and success rates."""

import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from msmcalib.errors import DegenerateConfiguration, IdMismatch, NoEvaluableTracks
from msmcalib.evaluation import (
    Sim3Transform,
    evaluate,
    heldout_reprojection,
    pose_error_table,
    pose_errors,
    success_rate,
    umeyama_align,
)
from msmcalib.geometry import Pose
from msmcalib.simulator import FAR, NEAR
from msmcalib.solver import Reconstruction


def true_reconstruction(scene, poses=None):
    recon = Reconstruction(scene.observations, scene.rig.intrinsics(), reference=0, baseline=1)
    for c, pose in (poses or scene.rig.poses()).items():
        recon.add_camera(c, pose)
    return recon


def similarity(seed=0):
    rng = np.random.default_rng(seed)
    rotation = Rotation.from_rotvec(rng.normal(size=3)).as_matrix()
    return Sim3Transform(rng.uniform(0.5, 3.0), rotation, rng.normal(size=3))


class TestUmeyama:
    def test_identity(self):
        x = np.random.default_rng(0).normal(size=(10, 3))
        T = umeyama_align(x, x)
        assert T.scale == pytest.approx(1.0)
        np.testing.assert_allclose(T.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(T.translation, 0.0, atol=1e-12)

    def test_recovers_a_similarity(self):
        x = np.random.default_rng(1).normal(size=(20, 3))
        truth = similarity(1)
        T = umeyama_align(x, truth.apply(x))
        assert T.scale == pytest.approx(truth.scale, rel=1e-12)
        np.testing.assert_allclose(T.rotation, truth.rotation, atol=1e-12)
        np.testing.assert_allclose(T.translation, truth.translation, atol=1e-10)

    def test_is_a_least_squares_optimum(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(30, 3))
        y = similarity(2).apply(x) + rng.normal(0.0, 0.05, x.shape)
        T = umeyama_align(x, y)

        def sse(t):
            return float(np.sum((t.apply(x) - y) ** 2))

        best = sse(T)
        for _ in range(20):
            delta = Rotation.from_rotvec(rng.normal(0.0, 1e-3, 3)).as_matrix()
            scale = T.scale * (1.0 + rng.normal(0.0, 1e-3))
            other = Sim3Transform(scale, delta @ T.rotation, T.translation + rng.normal(0.0, 1e-3, 3))
            assert sse(other) >= best

    def test_mirrored_target_still_gives_a_rotation(self):
        x = np.random.default_rng(3).normal(size=(12, 3))
        T = umeyama_align(x, x * [1.0, 1.0, -1.0])
        assert np.linalg.det(T.rotation) == pytest.approx(1.0)

    @pytest.mark.parametrize(
        "source",
        [
            np.outer(np.arange(5.0), [1.0, 2.0, 3.0]),
            np.zeros((4, 3)),
            np.eye(3)[:2],
        ],
    )
    def test_degenerate_sources(self, source):
        with pytest.raises(DegenerateConfiguration):
            umeyama_align(source, source)

    def test_invalid_similarity(self):
        with pytest.raises(DegenerateConfiguration):
            Sim3Transform(0.0, np.eye(3), np.zeros(3))
        with pytest.raises(DegenerateConfiguration):
            Sim3Transform(1.0, np.diag([1.0, 1.0, -1.0]), np.zeros(3))


class TestPoseErrors:
    def test_gauge_invariance(self, grid_scene):
        gt = grid_scene.rig.poses()
        transform = similarity(4)
        estimated = {c: transform.apply_to_pose(p) for c, p in gt.items()}
        for c in gt:
            np.testing.assert_allclose(estimated[c].center, transform.apply(gt[c].center), atol=1e-12)
        rot, trans = pose_errors(estimated, gt)
        assert rot < 1e-9
        assert trans < 1e-9

    def test_single_rotated_camera(self, grid_scene):
        gt = grid_scene.rig.poses()
        c = 3
        R = Rotation.from_euler("z", 1.0, degrees=True).as_matrix() @ gt[c].R
        estimated = dict(gt)
        estimated[c] = Pose.from_matrix(R, -R @ gt[c].center)
        rot, trans = pose_errors(estimated, gt)
        assert rot == pytest.approx(1.0 / math.sqrt(len(gt)), rel=1e-9)
        assert trans < 1e-9
        table = pose_error_table(estimated, gt).set_index("camera_id")
        assert table.loc[c, "rot_err_deg"] == pytest.approx(1.0, rel=1e-9)

    def test_camera_sets_must_agree(self, grid_scene):
        gt = grid_scene.rig.poses()
        estimated = {c: p for c, p in gt.items() if c != 0}
        with pytest.raises(IdMismatch):
            pose_errors(estimated, gt)

    def test_reconstruction_against_ground_truth(self, grid_scene, grid_recon):
        rot, trans = pose_errors(grid_recon.camera_poses(), grid_scene.rig)
        assert rot < 1e-5 and trans < 1e-6


class TestSuccessRate:
    def test_one_unregistered_camera_out_of_nine(self):
        errors = {c: 0.1 for c in range(8)}
        errors[8] = float("nan")
        assert success_rate(errors) == (89, 89, 89)

    def test_all_cameras_pass(self):
        assert success_rate({c: 0.1 for c in range(10)}) == (100, 100, 100)

    def test_thresholds(self):
        assert success_rate([0.4, 1.0, 3.0]) == (33, 67, 100)

    def test_rounds_half_up(self):
        assert success_rate([0.1] + [9.0] * 7) == (13, 13, 13)

    def test_missing_cameras_fail(self):
        assert success_rate({0: 0.1}, cameras=[0, 1]) == (50, 50, 50)

    def test_empty(self):
        assert success_rate([]) == (0, 0, 0)


class TestHeldoutReprojection:
    def test_true_poses_give_the_noise_level(self, noisy_scene):
        table = heldout_reprojection(true_reconstruction(noisy_scene), noisy_scene.heldout)
        lengths = noisy_scene.heldout.track_lengths()
        lengths = lengths[lengths >= 2]
        expected = 0.3 * math.sqrt(1.0 - 3.0 / (2.0 * lengths.mean()))
        rms = math.sqrt(np.sum(table["reproj_px"] ** 2 * table["observations"]) / table["observations"].sum())
        assert rms == pytest.approx(expected, rel=0.15)
        assert sorted(table["camera_id"]) == noisy_scene.rig.ids
        assert list(table.columns) == ["camera_id", "observations", "reproj_px", "mean_norm_px", "max_px"]

    def test_perturbed_camera_stands_out(self, noisy_scene):
        poses = noisy_scene.rig.poses()
        R = Rotation.from_euler("x", 5.0, degrees=True).as_matrix() @ poses[2].R
        poses[2] = Pose.from_matrix(R, -R @ poses[2].center)
        table = heldout_reprojection(true_reconstruction(noisy_scene, poses), noisy_scene.heldout).set_index("camera_id")
        assert table.loc[2, "reproj_px"] > 5.0
        assert table.loc[2, "reproj_px"] > 3 * table.drop(index=2)["reproj_px"].median()

    def test_single_registered_camera(self, noisy_scene):
        recon = true_reconstruction(noisy_scene, {0: noisy_scene.rig[0].pose})
        with pytest.raises(NoEvaluableTracks):
            heldout_reprojection(recon, noisy_scene.heldout)


class TestEvaluate:
    def test_report_on_an_exact_calibration(self, grid_scene, grid_recon):
        truth = dict(zip(grid_scene.points.point_ids.tolist(), grid_scene.points.xyz))
        report = evaluate(grid_recon, grid_scene.rig, true_points=truth)
        assert report.rot_rmse_deg < 1e-5
        assert report.trans_rmse < 1e-6
        assert report.reproj_px < 1e-6
        assert report.point_error_mean < 1e-6
        assert report.success == {0.5: 100, 2.0: 100, 5.0: 100}
        assert len(report.cameras) == len(grid_scene.rig)
        assert set(report.categories["category"]) == {FAR, NEAR}
        assert report.categories.set_index("category").loc[FAR, "cameras"] == 6

    def test_summary_and_serialization(self, grid_scene, grid_recon):
        report = evaluate(grid_recon, grid_scene.rig)
        summary = report.summary()
        assert {"success_0.5px", "success_2px", "success_5px"} <= set(summary)
        data = report.to_dict()
        assert data["summary"]["point_error_mean"] is None
        assert len(data["cameras"]) == len(grid_scene.rig)

    def test_heldout_drives_success(self, noisy_scene):
        recon = true_reconstruction(noisy_scene)
        report = evaluate(recon, noisy_scene.rig, heldout=noisy_scene.heldout)
        assert report.heldout is not None
        assert report.success[5.0] == 100
        assert "heldout_px" in report.cameras.columns

    def test_unknown_camera(self, grid_scene, grid_recon):
        poses = {c: p for c, p in grid_scene.rig.poses().items() if c != 0}
        with pytest.raises(IdMismatch):
            evaluate(grid_recon, poses)
