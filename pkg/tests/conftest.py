from __future__ import annotations

import numpy as np
import pytest
from scipy.ndimage import maximum_filter, minimum_filter

from app.config.settings import PRESETS
from app.geometry.core import CameraIntrinsics, GroundPlane
from app.synth.scenes import GROUND_ID, SceneSpec, default_scene, forward_poses, make_pair


def uniform_surface(surface: np.ndarray, radius: int) -> np.ndarray:
    """Pixels whose (2r+1)² neighbourhood lies on a single surface id."""
    size = 2 * radius + 1
    lo = minimum_filter(surface, size=size, mode="nearest")
    hi = maximum_filter(surface, size=size, mode="nearest")
    return lo == hi


def vertical_face(surface: np.ndarray) -> np.ndarray:
    """Box faces whose normal is horizontal (side, front and back faces)."""
    face = (surface - 1) % 6
    return (surface > GROUND_ID) & (face // 2 != 1)


@pytest.fixture(scope="session")
def kitti_K() -> CameraIntrinsics:
    return PRESETS["kitti"].intrinsics()


@pytest.fixture(scope="session")
def small_K() -> CameraIntrinsics:
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=40.0, cy=30.0, width=80, height=60)


@pytest.fixture(scope="session")
def level_plane() -> GroundPlane:
    return GroundPlane.level(1.65)


@pytest.fixture(scope="session")
def scene_pair(kitti_K):
    """Three boxes on a road, source camera 0.8 m behind the target."""
    pose_t, pose_s = forward_poses(1.65, 0.8)
    return make_pair(default_scene(), pose_t, pose_s, kitti_K, supersample=2)


@pytest.fixture(scope="session")
def road_pair(kitti_K):
    pose_t, pose_s = forward_poses(1.65, 0.8)
    return make_pair(SceneSpec(), pose_t, pose_s, kitti_K, supersample=2)


@pytest.fixture(scope="session")
def quarter_pair(kitti_K):
    """The three-box pair at 160×48, for per-pixel reference loops."""
    pose_t, pose_s = forward_poses(1.65, 0.8)
    return make_pair(default_scene(), pose_t, pose_s, kitti_K.scaled(0.25), supersample=1)
