"""Point-cloud positioning model: 3D points, multi-view descriptor lists, visibility."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import VisibilityMatrix
from .structures import StructureLabeling


@dataclass
class PointCloudModel:
    """A reconstructed scene model used for localization.

    Each point carries the descriptor samples from the cameras that observed
    it (one list entry per observing view). `point_ids` are stable global ids
    so compressed sub-models keep referring to the source points.
    """

    xyz: np.ndarray
    descriptors: list[np.ndarray]
    visibility: VisibilityMatrix
    point_ids: np.ndarray = field(default=None)  # type: ignore[assignment]
    model_id: str = "model"
    labeling: StructureLabeling | None = None

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.xyz)):
            raise ValueError("point coordinates must be finite")
        n = len(self.xyz)
        if self.point_ids is None:
            self.point_ids = np.arange(n, dtype=np.int64)
        else:
            self.point_ids = np.asarray(self.point_ids, dtype=np.int64).reshape(-1)
        if len(self.point_ids) != n or len(np.unique(self.point_ids)) != n:
            raise ValueError("point_ids must be unique and match the point count")
        if len(self.descriptors) != n:
            raise ValueError("one descriptor list required per point")
        dims = {d.shape[1] for d in self.descriptors if d.ndim == 2}
        if len(dims) > 1:
            raise ValueError("descriptor dimension must be consistent")
        for d in self.descriptors:
            if d.ndim != 2 or d.shape[0] < 1:
                raise ValueError("each point needs at least one descriptor sample")
        if self.visibility.num_points != n:
            raise ValueError("visibility matrix size must match the point count")

    @property
    def num_points(self) -> int:
        return len(self.xyz)

    @property
    def num_cameras(self) -> int:
        return self.visibility.num_cameras

    @property
    def descriptor_dim(self) -> int:
        return self.descriptors[0].shape[1] if self.descriptors else 0

    @property
    def num_descriptors(self) -> int:
        return int(sum(d.shape[0] for d in self.descriptors))

    def subset(self, rows: np.ndarray, model_id: str | None = None) -> "PointCloudModel":
        """Sub-model over the given rows (selection order preserved).

        Descriptor lists are carried over unchanged; visibility is restricted
        to the kept points with the camera count preserved.
        """
        rows = np.asarray(rows, dtype=np.int64)
        return PointCloudModel(
            xyz=self.xyz[rows].copy(),
            descriptors=[self.descriptors[i] for i in rows],
            visibility=self.visibility.restrict_points(rows),
            point_ids=self.point_ids[rows].copy(),
            model_id=model_id if model_id is not None else self.model_id,
        )

    def equals(self, other: "PointCloudModel") -> bool:
        """Field-by-field exact equality (used by serialization round trips)."""
        if (
            self.model_id != other.model_id
            or not np.array_equal(self.xyz, other.xyz)
            or not np.array_equal(self.point_ids, other.point_ids)
            or self.visibility != other.visibility
            or len(self.descriptors) != len(other.descriptors)
        ):
            return False
        if any(not np.array_equal(a, b) for a, b in zip(self.descriptors, other.descriptors)):
            return False
        if (self.labeling is None) != (other.labeling is None):
            return False
        if self.labeling is not None and other.labeling is not None:
            if not _labeling_equal(self.labeling, other.labeling):
                return False
        return True


def _labeling_equal(a: StructureLabeling, b: StructureLabeling) -> bool:
    from .structures import LineStructure, PlaneStructure

    if a.num_points != b.num_points or len(a.structures) != len(b.structures):
        return False
    if not np.array_equal(a.residual_ids, b.residual_ids):
        return False
    for sa, sb in zip(a.structures, b.structures):
        if type(sa) is not type(sb) or not np.array_equal(sa.member_ids, sb.member_ids):
            return False
        if isinstance(sa, PlaneStructure):
            if not np.array_equal(sa.normal, sb.normal) or sa.offset != sb.offset:
                return False
        elif isinstance(sa, LineStructure):
            if not np.array_equal(sa.anchor, sb.anchor) or not np.array_equal(
                sa.direction, sb.direction
            ):
                return False
    return True
