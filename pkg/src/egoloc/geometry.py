"""Pinhole camera geometry: poses, projection, and the multi-view reprojection objective.

Conventions
-----------
World frame is right-handed with coordinates in meters. A camera pose maps
world to camera coordinates as ``x_cam = R @ x_world + t``; the camera looks
along +Z of its own frame, so a point is in front of the camera when its
camera-frame depth is positive. Pixels are ``(u, v)`` with u along image
width and v along image height.

All types are immutable after construction and all operations are pure, so
they are safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import BehindCameraError, MissingObservationError

# Minimum camera-frame depth for a projection to be defined.
DEPTH_EPSILON = 1e-12

# Tolerance for the rotation orthonormality check on pose construction.
ROTATION_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    focal_x: float
    focal_y: float
    principal_x: float
    principal_y: float
    image_width: int
    image_height: int

    def __post_init__(self):
        if not (self.focal_x > 0 and self.focal_y > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.image_width > 0 and self.image_height > 0):
            raise ValueError("image size must be positive")

    @property
    def matrix(self) -> np.ndarray:
        """3x3 calibration matrix K."""
        return np.array(
            [
                [self.focal_x, 0.0, self.principal_x],
                [0.0, self.focal_y, self.principal_y],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform ``x_cam = R @ x_world + t``.

    The rotation is validated to be orthonormal with determinant +1 on
    every construction.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3).copy()
        t = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        if np.max(np.abs(r.T @ r - np.eye(3))) >= ROTATION_TOL:
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(r) <= 0:
            raise ValueError("rotation must have determinant +1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if not np.all(np.isfinite(self.center)):
            raise ValueError("camera center is not finite")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates, ``-R.T @ t``."""
        return -self.rotation.T @ self.translation


def camera_center(pose: CameraPose) -> np.ndarray:
    """World position of the camera; satisfies ``R @ c + t = 0``."""
    return pose.center


def project(pose: CameraPose, intr: CameraIntrinsics, point: np.ndarray) -> np.ndarray:
    """Project a world point into pixel coordinates.

    Raises:
        BehindCameraError: if the camera-frame depth is <= DEPTH_EPSILON.
    """
    p_cam = pose.rotation @ np.asarray(point, dtype=np.float64).reshape(3) + pose.translation
    z = p_cam[2]
    if z <= DEPTH_EPSILON:
        raise BehindCameraError(f"camera-frame depth {z:.3e} <= {DEPTH_EPSILON}")
    u = intr.focal_x * p_cam[0] / z + intr.principal_x
    v = intr.focal_y * p_cam[1] / z + intr.principal_y
    return np.array([u, v])


def project_array(
    pose: CameraPose, intr: CameraIntrinsics, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Project many world points at once.

    Returns ``(pixels, depths)`` where pixels of points at or behind the
    camera plane are NaN instead of raising; callers filter on depth.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    p_cam = pts @ pose.rotation.T + pose.translation
    z = p_cam[:, 2]
    valid = z > DEPTH_EPSILON
    pixels = np.full((len(pts), 2), np.nan)
    safe_z = np.where(valid, z, 1.0)
    pixels[:, 0] = intr.focal_x * p_cam[:, 0] / safe_z + intr.principal_x
    pixels[:, 1] = intr.focal_y * p_cam[:, 1] / safe_z + intr.principal_y
    pixels[~valid] = np.nan
    return pixels, z


def unproject(
    pose: CameraPose, intr: CameraIntrinsics, pixel: np.ndarray, depth: float
) -> np.ndarray:
    """Back-project a pixel at a given camera-frame depth to a world point."""
    if depth <= 0:
        raise ValueError("depth must be positive")
    u, v = np.asarray(pixel, dtype=np.float64).reshape(2)
    x = (u - intr.principal_x) / intr.focal_x * depth
    y = (v - intr.principal_y) / intr.focal_y * depth
    p_cam = np.array([x, y, depth])
    return pose.rotation.T @ (p_cam - pose.translation)


def reprojection_error(
    pose: CameraPose, intr: CameraIntrinsics, point: np.ndarray, observed: np.ndarray
) -> float:
    """Euclidean pixel distance between the projection of `point` and `observed`."""
    proj = project(pose, intr, point)
    return float(np.linalg.norm(proj - np.asarray(observed, dtype=np.float64).reshape(2)))


class VisibilityMatrix:
    """Sparse binary point-camera visibility.

    Stored both as per-camera point lists and per-point camera lists; the two
    index directions are kept mutually consistent by construction. Lists are
    sorted ascending so equality and iteration order are deterministic.
    """

    def __init__(
        self,
        num_points: int,
        points_in_camera: Sequence[np.ndarray],
        *,
        min_track_length: int = 0,
    ):
        if num_points < 0:
            raise ValueError("num_points must be non-negative")
        self.num_points = int(num_points)
        self.points_in_camera: list[np.ndarray] = []
        cams: list[list[int]] = [[] for _ in range(num_points)]
        for j, ids in enumerate(points_in_camera):
            arr = np.unique(np.asarray(ids, dtype=np.int64).reshape(-1))
            if arr.size and (arr[0] < 0 or arr[-1] >= num_points):
                raise ValueError(f"camera {j} references point ids out of range")
            arr.flags.writeable = False
            self.points_in_camera.append(arr)
            for i in arr:
                cams[i].append(j)
        self.cameras_seeing_point = [np.asarray(c, dtype=np.int64) for c in cams]
        for arr in self.cameras_seeing_point:
            arr.flags.writeable = False
        if min_track_length > 0:
            short = [i for i, c in enumerate(self.cameras_seeing_point) if len(c) < min_track_length]
            if short:
                raise ValueError(
                    f"{len(short)} points visible in fewer than {min_track_length} cameras"
                )

    @property
    def num_cameras(self) -> int:
        return len(self.points_in_camera)

    @classmethod
    def from_dense(cls, mask: np.ndarray, *, min_track_length: int = 0) -> "VisibilityMatrix":
        """Build from a dense (num_points, num_cameras) boolean matrix."""
        m = np.asarray(mask, dtype=bool)
        lists = [np.flatnonzero(m[:, j]) for j in range(m.shape[1])]
        return cls(m.shape[0], lists, min_track_length=min_track_length)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.num_points, self.num_cameras), dtype=bool)
        for j, ids in enumerate(self.points_in_camera):
            dense[ids, j] = True
        return dense

    def sees(self, point: int, camera: int) -> bool:
        ids = self.points_in_camera[camera]
        pos = np.searchsorted(ids, point)
        return pos < len(ids) and ids[pos] == point

    def camera_counts(self) -> np.ndarray:
        """Number of visible points per camera."""
        return np.array([len(ids) for ids in self.points_in_camera], dtype=np.int64)

    def track_lengths(self) -> np.ndarray:
        """Number of cameras seeing each point."""
        return np.array([len(c) for c in self.cameras_seeing_point], dtype=np.int64)

    def restrict_points(self, rows: np.ndarray) -> "VisibilityMatrix":
        """Visibility over a subset of points, re-indexed to 0..len(rows)-1.

        Camera count is preserved; cameras seeing none of the kept points get
        empty lists.
        """
        rows = np.asarray(rows, dtype=np.int64)
        remap = -np.ones(self.num_points, dtype=np.int64)
        remap[rows] = np.arange(len(rows))
        lists = []
        for ids in self.points_in_camera:
            kept = remap[ids]
            lists.append(kept[kept >= 0])
        return VisibilityMatrix(len(rows), lists)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VisibilityMatrix):
            return NotImplemented
        return (
            self.num_points == other.num_points
            and self.num_cameras == other.num_cameras
            and all(
                np.array_equal(a, b)
                for a, b in zip(self.points_in_camera, other.points_in_camera)
            )
        )

    def __repr__(self) -> str:
        return f"VisibilityMatrix({self.num_points} points, {self.num_cameras} cameras)"


def sfm_objective(
    views: Sequence[tuple[CameraPose, CameraIntrinsics]],
    points: np.ndarray,
    visibility: VisibilityMatrix,
    observations: Mapping[tuple[int, int], np.ndarray],
    *,
    squared: bool = False,
) -> float:
    """Sum of reprojection distances over all visible (point, camera) pairs.

    `observations` maps ``(point_index, camera_index)`` to the observed pixel
    and must cover every pair the visibility matrix marks as seen. The
    reported value uses raw Euclidean distances by default; pass
    ``squared=True`` for the least-squares form used inside refinement.

    Raises:
        MissingObservationError: a visible pair has no stored observation.
        BehindCameraError: a visible point has non-positive depth in its view.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    total = 0.0
    for j, (pose, intr) in enumerate(views):
        for i in visibility.points_in_camera[j]:
            key = (int(i), j)
            if key not in observations:
                raise MissingObservationError(f"no observation for point {i} in camera {j}")
            d = reprojection_error(pose, intr, pts[i], observations[key])
            total += d * d if squared else d
    return total


def look_at_rotation(eye: np.ndarray, target: np.ndarray, up: np.ndarray | None = None) -> np.ndarray:
    """World-to-camera rotation for a camera at `eye` looking toward `target`.

    Camera +Z points at the target, +X right, +Y down (image convention).
    """
    eye = np.asarray(eye, dtype=np.float64).reshape(3)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    up = np.array([0.0, 0.0, 1.0]) if up is None else np.asarray(up, dtype=np.float64)
    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("eye and target coincide")
    forward = forward / norm
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        # Forward parallel to up; pick an arbitrary perpendicular axis.
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def pose_looking_at(eye: np.ndarray, target: np.ndarray) -> CameraPose:
    """Camera pose positioned at `eye` with the optical axis through `target`."""
    r = look_at_rotation(eye, target)
    eye = np.asarray(eye, dtype=np.float64).reshape(3)
    return CameraPose(rotation=r, translation=-r @ eye)
