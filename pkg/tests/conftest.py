"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from egoloc import (
    CameraIntrinsics,
    CameraPose,
    SceneSpec,
    build_model,
    generate_scene,
)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, np.pi)
    return Rotation.from_rotvec(axis * angle).as_matrix()


def random_pose(rng: np.random.Generator, translation_scale: float = 5.0) -> CameraPose:
    return CameraPose(
        rotation=random_rotation(rng),
        translation=rng.uniform(-translation_scale, translation_scale, size=3),
    )


def unit_intrinsics() -> CameraIntrinsics:
    """Focal 1, principal at origin: projection in normalized coordinates."""
    return CameraIntrinsics(
        focal_x=1.0, focal_y=1.0, principal_x=0.0, principal_y=0.0, image_width=2, image_height=2
    )


@pytest.fixture(scope="session")
def small_scene():
    spec = SceneSpec(
        num_planes=2,
        num_lines=1,
        points_per_plane=150,
        points_per_line=50,
        num_clutter=40,
        num_cameras=6,
        descriptor_dim=32,
        descriptor_noise_sigma=0.03,
        pixel_noise_sigma=0.5,
        seed=11,
    )
    return generate_scene(spec)


@pytest.fixture(scope="session")
def small_model(small_scene):
    return build_model(small_scene, reconstruction_noise_sigma=0.0, seed=5)
