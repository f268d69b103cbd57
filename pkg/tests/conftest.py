"""Shared synthetic rigs and scenes."""

from dataclasses import replace

import numpy as np
import pytest

from msmcalib.geometry import Camera, CameraIntrinsics, CameraRig, look_at
from msmcalib.simulator import Scenario, ScenarioConfig, simulate_scene
from msmcalib.solver import SolverOptions, calibrate


def ring_rig(azimuths_deg, radius=2.8, height=2.8, focal=915.0):
    """Far cameras at the given azimuths, all aimed at the origin."""
    intr = CameraIntrinsics.from_focal(focal)
    cameras = []
    for i, az in enumerate(np.radians(azimuths_deg)):
        center = (radius * np.cos(az), radius * np.sin(az), height)
        cameras.append(Camera(i, intr, look_at(center, (0.0, 0.0, 0.0))))
    return CameraRig(tuple(cameras))


@pytest.fixture
def intrinsics():
    return CameraIntrinsics.from_focal(915.0)


@pytest.fixture(scope="session")
def small_config():
    # every camera sees most of the floor grid
    return ScenarioConfig(
        scenario=Scenario.GRID_FLOOR,
        grid_rows=20,
        grid_cols=40,
        grid_width=2.0,
        grid_depth=1.5,
        msm_gating=False,
    )


@pytest.fixture(scope="session")
def grid_scene():
    return simulate_scene(ScenarioConfig(), seed=7)


@pytest.fixture(scope="session")
def grid_recon(grid_scene):
    return calibrate(grid_scene.observations, grid_scene.rig.intrinsics(), SolverOptions())


@pytest.fixture(scope="session")
def noisy_scene(small_config):
    return simulate_scene(replace(small_config, sigma=0.3), seed=11, heldout=True)


@pytest.fixture
def make_ring_rig():
    return ring_rig
