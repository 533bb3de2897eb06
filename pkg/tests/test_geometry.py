"""Camera geometry: projection, reprojection error, the multi-view objective."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egoloc import (
    CameraIntrinsics,
    CameraPose,
    VisibilityMatrix,
    camera_center,
    project,
    reprojection_error,
    sfm_objective,
    unproject,
)
from egoloc.errors import BehindCameraError, MissingObservationError

from conftest import random_pose, random_rotation, unit_intrinsics

IDENTITY = CameraPose(rotation=np.eye(3), translation=np.zeros(3))


def line_plane_projection_oracle(
    pose: CameraPose, intr: CameraIntrinsics, point: np.ndarray
) -> np.ndarray:
    """Project by intersecting the viewing ray with the z=1 plane in camera
    coordinates, solved as a generic line/plane intersection."""
    center = -pose.rotation.T @ pose.translation
    p0 = pose.rotation @ center + pose.translation  # camera center in camera frame
    p1 = pose.rotation @ point + pose.translation
    direction = p1 - p0
    normal = np.array([0.0, 0.0, 1.0])
    s = (1.0 - normal @ p0) / (normal @ direction)
    hit = p0 + s * direction
    return np.array(
        [intr.focal_x * hit[0] + intr.principal_x, intr.focal_y * hit[1] + intr.principal_y]
    )


class TestProject:
    def test_on_optical_axis(self):
        pixel = project(IDENTITY, unit_intrinsics(), np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(pixel, [0.0, 0.0])

    def test_similar_triangles(self):
        pixel = project(IDENTITY, unit_intrinsics(), np.array([1.0, 1.0, 2.0]))
        np.testing.assert_allclose(pixel, [0.5, 0.5])

    def test_matches_line_plane_intersection_oracle(self):
        rng = np.random.default_rng(42)
        intr = CameraIntrinsics(
            focal_x=500.0,
            focal_y=510.0,
            principal_x=320.0,
            principal_y=240.0,
            image_width=640,
            image_height=480,
        )
        checked = 0
        while checked < 50:
            pose = random_pose(rng)
            point = rng.uniform(-10, 10, size=3)
            cam_z = (pose.rotation @ point + pose.translation)[2]
            if cam_z < 0.1:
                continue
            expected = line_plane_projection_oracle(pose, intr, point)
            got = project(pose, intr, point)
            np.testing.assert_allclose(got, expected, atol=1e-10)
            checked += 1

    def test_behind_camera_raises(self):
        with pytest.raises(BehindCameraError):
            project(IDENTITY, unit_intrinsics(), np.array([0.0, 0.0, -1.0]))
        with pytest.raises(BehindCameraError):
            project(IDENTITY, unit_intrinsics(), np.array([0.0, 0.0, 0.0]))

    @given(
        u=st.floats(-300, 300),
        v=st.floats(-300, 300),
        depth=st.floats(0.01, 100.0),
        seed=st.integers(0, 2**32 - 1),
    )
    @settings(max_examples=50, deadline=None)
    def test_unproject_round_trip(self, u, v, depth, seed):
        rng = np.random.default_rng(seed)
        pose = random_pose(rng)
        intr = CameraIntrinsics(
            focal_x=400.0,
            focal_y=420.0,
            principal_x=300.0,
            principal_y=200.0,
            image_width=600,
            image_height=400,
        )
        pixel = np.array([u, v])
        world = unproject(pose, intr, pixel, depth)
        np.testing.assert_allclose(project(pose, intr, world), pixel, atol=1e-9)


class TestReprojectionError:
    def test_zero_on_exact_observation(self):
        point = np.array([0.3, -0.2, 2.0])
        observed = project(IDENTITY, unit_intrinsics(), point)
        assert reprojection_error(IDENTITY, unit_intrinsics(), point, observed) == 0.0

    def test_three_four_five(self):
        point = np.array([0.0, 0.0, 1.0])  # projects to (0, 0)
        err = reprojection_error(IDENTITY, unit_intrinsics(), point, np.array([3.0, 4.0]))
        assert err == pytest.approx(5.0, abs=1e-12)

    def test_matches_project_recomputation(self):
        rng = np.random.default_rng(7)
        intr = unit_intrinsics()
        for _ in range(20):
            pose = random_pose(rng)
            point = rng.uniform(-5, 5, size=3)
            if (pose.rotation @ point + pose.translation)[2] < 0.1:
                continue
            observed = rng.uniform(-2, 2, size=2)
            expected = float(np.linalg.norm(project(pose, intr, point) - observed))
            assert abs(reprojection_error(pose, intr, point, observed) - expected) <= 1e-12

    def test_non_negative(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            point = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 3)])
            observed = rng.uniform(-2, 2, size=2)
            assert reprojection_error(IDENTITY, unit_intrinsics(), point, observed) >= 0.0


class TestCameraCenter:
    def test_identity(self):
        assert np.array_equal(camera_center(IDENTITY), np.zeros(3))

    def test_translation_negated(self):
        pose = CameraPose(rotation=np.eye(3), translation=np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(camera_center(pose), [-1.0, -2.0, -3.0])

    def test_residual_property(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            pose = random_pose(rng)
            c = camera_center(pose)
            np.testing.assert_allclose(pose.rotation @ c + pose.translation, 0.0, atol=1e-12)


class TestCameraPoseValidation:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError, match="orthonormal"):
            CameraPose(rotation=np.eye(3) * 1.01, translation=np.zeros(3))

    def test_rejects_reflection(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError, match="determinant"):
            CameraPose(rotation=r, translation=np.zeros(3))

    def test_accepts_valid_rotations(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            CameraPose(rotation=random_rotation(rng), translation=rng.normal(size=3))


def _simple_setup(rng, num_points=5, num_cameras=3):
    """Points in front of a few inward-looking cameras, exact observations."""
    from egoloc.geometry import pose_looking_at

    points = rng.uniform(-1, 1, size=(num_points, 3))
    views = []
    for j in range(num_cameras):
        angle = 2 * np.pi * j / num_cameras
        eye = 6.0 * np.array([np.cos(angle), np.sin(angle), 0.3])
        views.append((pose_looking_at(eye, np.zeros(3)), unit_intrinsics()))
    vis = VisibilityMatrix(num_points, [np.arange(num_points)] * num_cameras)
    obs = {
        (i, j): project(pose, intr, points[i])
        for j, (pose, intr) in enumerate(views)
        for i in range(num_points)
    }
    return points, views, vis, obs


class TestSfmObjective:
    def test_zero_on_consistent_data(self):
        rng = np.random.default_rng(0)
        points, views, vis, obs = _simple_setup(rng)
        assert sfm_objective(views, points, vis, obs) <= 1e-9

    def test_single_offset_observation(self):
        rng = np.random.default_rng(1)
        points, views, vis, obs = _simple_setup(rng, num_points=1, num_cameras=1)
        obs[(0, 0)] = obs[(0, 0)] + np.array([3.0, 4.0])
        assert sfm_objective(views, points, vis, obs) == pytest.approx(5.0, abs=1e-9)

    def test_matches_per_term_oracle(self):
        rng = np.random.default_rng(2)
        points, views, vis, obs = _simple_setup(rng, num_points=5, num_cameras=3)
        noisy = {key: px + rng.normal(scale=2.0, size=2) for key, px in obs.items()}
        expected = 0.0
        for (i, j), px in noisy.items():
            pose, intr = views[j]
            expected += np.linalg.norm(project(pose, intr, points[i]) - px)
        assert sfm_objective(views, points, vis, noisy) == pytest.approx(expected, abs=1e-12)

    def test_additive_over_camera_partition(self):
        rng = np.random.default_rng(3)
        points, views, vis, obs = _simple_setup(rng, num_points=6, num_cameras=4)
        total = sfm_objective(views, points, vis, obs | {})
        noisy = {key: px + rng.normal(scale=1.0, size=2) for key, px in obs.items()}
        total = sfm_objective(views, points, vis, noisy)
        parts = 0.0
        for j in range(4):
            sub_vis = VisibilityMatrix(6, [vis.points_in_camera[j]])
            sub_obs = {(i, 0): noisy[(i, j)] for i in range(6)}
            parts += sfm_objective([views[j]], points, sub_vis, sub_obs)
        assert parts == pytest.approx(total, abs=1e-9)

    def test_missing_observation_raises(self):
        rng = np.random.default_rng(4)
        points, views, vis, obs = _simple_setup(rng)
        del obs[(0, 0)]
        with pytest.raises(MissingObservationError):
            sfm_objective(views, points, vis, obs)

    def test_squared_mode(self):
        rng = np.random.default_rng(5)
        points, views, vis, obs = _simple_setup(rng, num_points=1, num_cameras=1)
        obs[(0, 0)] = obs[(0, 0)] + np.array([3.0, 4.0])
        assert sfm_objective(views, points, vis, obs, squared=True) == pytest.approx(25.0)


class TestVisibilityMatrix:
    def test_cross_consistency(self):
        vis = VisibilityMatrix(4, [np.array([0, 2]), np.array([1, 2, 3])])
        assert vis.sees(2, 0) and vis.sees(2, 1)
        assert not vis.sees(0, 1)
        np.testing.assert_array_equal(vis.cameras_seeing_point[2], [0, 1])
        np.testing.assert_array_equal(vis.camera_counts(), [2, 3])

    def test_dense_round_trip(self):
        rng = np.random.default_rng(9)
        mask = rng.random((10, 4)) < 0.5
        vis = VisibilityMatrix.from_dense(mask)
        np.testing.assert_array_equal(vis.to_dense(), mask)

    def test_min_track_length_enforced(self):
        with pytest.raises(ValueError, match="fewer than 2"):
            VisibilityMatrix(3, [np.array([0, 1]), np.array([1])], min_track_length=2)

    def test_out_of_range_ids_rejected(self):
        with pytest.raises(ValueError, match="out of range"):
            VisibilityMatrix(2, [np.array([0, 5])])

    def test_restrict_points(self):
        vis = VisibilityMatrix(5, [np.array([0, 2, 4]), np.array([1, 2])])
        sub = vis.restrict_points(np.array([2, 4]))
        assert sub.num_points == 2 and sub.num_cameras == 2
        np.testing.assert_array_equal(sub.points_in_camera[0], [0, 1])
        np.testing.assert_array_equal(sub.points_in_camera[1], [0])
