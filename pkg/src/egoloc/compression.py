"""Structure-preserving model compression via weighted set k-cover.

The weighted greedy selects, at each step, the point maximizing
``weight * (number of under-covered cameras seeing it)``. Selecting a point
halves the weights of its plane/line's remaining points so later picks spread
across the scene's structures, zeroes the weights of points that can no
longer help any under-covered camera, and renormalizes. Two baselines are
provided for comparison: the unweighted set k-cover greedy and per-structure
top-visibility ranking.

All selection is deterministic: score ties break to the lowest point id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateModelError
from .model import PointCloudModel
from .structures import StructureLabeling


@dataclass
class WeightAssignment:
    """Per-point selection weights derived from structure membership."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")


@dataclass
class CompressedModel:
    """Subset of a source model selected by a compression strategy.

    `selected_ids` are source point ids in selection order; `model` is the
    materialized sub-model carrying the selected points' descriptor lists
    unchanged. `achieved_counts[j]` is the number of selected points visible
    in camera j of the source model.
    """

    model: PointCloudModel
    selected_ids: np.ndarray
    source_model_id: str
    method: str
    parameter: float
    achieved_counts: np.ndarray

    def __post_init__(self):
        self.selected_ids = np.asarray(self.selected_ids, dtype=np.int64).reshape(-1)
        if len(np.unique(self.selected_ids)) != len(self.selected_ids):
            raise ValueError("selected ids must be unique")
        self.achieved_counts = np.asarray(self.achieved_counts, dtype=np.int64).reshape(-1)

    @property
    def num_points(self) -> int:
        return len(self.selected_ids)


@dataclass
class CoverageStats:
    """Coverage achieved by a compressed model at a given k."""

    per_camera_covered: np.ndarray
    saturated: np.ndarray
    num_saturated: int
    per_structure_selected: np.ndarray | None
    retained_fraction: float


def assign_weights(labeling: StructureLabeling, num_points: int) -> WeightAssignment:
    """Initial weights: each point gets its group's share of the cloud.

    A point in a plane/line with ``n`` members gets ``n / N``; residual points
    get ``|residual| / N``. Larger structures therefore start with more
    selection mass.
    """
    if labeling.num_points != num_points:
        raise ValueError("labeling does not cover the requested number of points")
    w = np.empty(num_points, dtype=np.float64)
    for s in labeling.structures:
        w[s.member_ids] = len(s.member_ids) / num_points
    w[labeling.residual_ids] = len(labeling.residual_ids) / num_points
    return WeightAssignment(weights=w)


def _check_model(model: PointCloudModel):
    if model.num_points == 0 or model.num_cameras == 0:
        raise DegenerateModelError("model must have at least one point and one camera")


def _finalize(
    model: PointCloudModel, order: list[int], method: str, parameter: float
) -> CompressedModel:
    rows = np.asarray(order, dtype=np.int64)
    sub = model.subset(rows, model_id=f"{model.model_id}/{method}")
    counts = sub.visibility.camera_counts()
    return CompressedModel(
        model=sub,
        selected_ids=model.point_ids[rows],
        source_model_id=model.model_id,
        method=method,
        parameter=float(parameter),
        achieved_counts=counts,
    )


def _greedy_kcover(
    model: PointCloudModel,
    k: int,
    weights: np.ndarray | None,
    labels: np.ndarray | None,
    trace: list | None = None,
) -> list[int]:
    """Greedy selection loop shared by the weighted and unweighted methods.

    Runs until every camera has k selected points or has had all of its
    visible points selected (saturated). With `weights` given, applies the
    adaptive halving / zeroing / renormalization schedule after each pick.

    `cover[i]` (selected points excluded) counts the under-covered cameras
    seeing point i and is maintained incrementally: when a camera reaches k
    its visibility column is subtracted. All cover arithmetic is small
    integers in float64, so the scores equal a full per-iteration rescan
    bit for bit.
    """
    n, m = model.num_points, model.num_cameras
    vis = model.visibility.to_dense()
    vis_f = vis.astype(np.float64)
    cam_rows = model.visibility.points_in_camera

    counts = np.zeros(m, dtype=np.int64)
    selected = np.zeros(n, dtype=bool)
    # Unselected visible points per camera; zero means the camera is
    # saturated and can no longer make progress.
    remaining = model.visibility.camera_counts().copy()
    under = np.ones(m, dtype=bool) if k >= 1 else np.zeros(m, dtype=bool)
    cover = vis_f[:, under].sum(axis=1)
    w = None if weights is None else weights.astype(np.float64).copy()
    order: list[int] = []

    while True:
        if not (under & (remaining > 0)).any():
            break

        scores = cover if w is None else w * cover
        scores = np.where(selected, -np.inf, scores)
        best = int(np.argmax(scores))
        if scores[best] <= 0:
            raise AssertionError("greedy invariant violated: no useful candidate")

        step = {"selected": best} if trace is not None else None
        order.append(best)
        selected[best] = True
        seen_by = vis[best]
        counts[seen_by] += 1
        remaining[seen_by] -= 1
        crossed = seen_by & under & (counts >= k)
        if crossed.any():
            under = under & ~crossed
            cover = cover - vis_f[:, crossed].sum(axis=1)

        if w is not None:
            if step is not None:
                step["weights_before"] = w.copy()
            w[best] = 0.0
            if labels is not None and labels[best] >= 0:
                members = (labels == labels[best]) & ~selected
                w[members] = w[members] / 2.0
            if step is not None:
                step["weights_after_halving"] = w.copy()
            useless = ~selected & (cover == 0)
            w[useless] = 0.0
            if step is not None:
                step["weights_after_zeroing"] = w.copy()
            total = w.sum()
            if total > 0:
                w = w / total
            if step is not None:
                step["weights_after_norm"] = w.copy()
        if trace is not None:
            trace.append(step)
    return order


def compress_weighted_kcover(
    model: PointCloudModel,
    labeling: StructureLabeling,
    k: int,
    *,
    trace: list | None = None,
) -> CompressedModel:
    """Adaptive weighted set k-cover selection.

    Pass a list as `trace` to capture the per-iteration weight schedule
    (used by the oracle and invariant tests).
    """
    _check_model(model)
    if k < 1:
        raise ValueError("k must be at least 1")
    weights = assign_weights(labeling, model.num_points).weights
    labels = labeling.labels()
    order = _greedy_kcover(model, k, weights, labels, trace)
    return _finalize(model, order, "weighted_kcover", k)


def compress_set_kcover(model: PointCloudModel, k: int) -> CompressedModel:
    """Unweighted set k-cover greedy: pick the point covering the most
    under-covered cameras; ties go to the lowest point id."""
    _check_model(model)
    if k < 1:
        raise ValueError("k must be at least 1")
    order = _greedy_kcover(model, k, None, None)
    return _finalize(model, order, "set_kcover", k)


def compress_top_visibility(
    model: PointCloudModel, labeling: StructureLabeling, fraction: float
) -> CompressedModel:
    """Keep the most-visible ``ceil(fraction * size)`` points of each
    structure group (planes, lines, and the residual group)."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    if labeling.num_points != model.num_points:
        raise ValueError("labeling does not match the model")
    track = model.visibility.track_lengths()
    order: list[int] = []
    groups = [s.member_ids for s in labeling.structures]
    if len(labeling.residual_ids):
        groups.append(labeling.residual_ids)
    for ids in groups:
        keep = int(np.ceil(fraction * len(ids)))
        # Sort by descending visibility, ties by lowest id.
        ranked = ids[np.lexsort((ids, -track[ids]))]
        order.extend(int(i) for i in ranked[:keep])
    return _finalize(model, order, "top_visibility", fraction)


def coverage_report(
    model: PointCloudModel, compressed: CompressedModel, k: int
) -> CoverageStats:
    """Exact per-camera coverage of a compressed model at level k.

    Saturated cameras are those that cannot reach k even in the full model.
    Per-structure counts are included when the source model carries a
    labeling.
    """
    id_to_row = {int(pid): r for r, pid in enumerate(model.point_ids)}
    rows = np.array([id_to_row[int(i)] for i in compressed.selected_ids], dtype=np.int64)
    selected = np.zeros(model.num_points, dtype=bool)
    selected[rows] = True
    covered = np.array(
        [int(selected[ids].sum()) for ids in model.visibility.points_in_camera],
        dtype=np.int64,
    )
    full = model.visibility.camera_counts()
    saturated = full < k
    per_structure = None
    if model.labeling is not None:
        lab = model.labeling
        counts = [int(selected[s.member_ids].sum()) for s in lab.structures]
        counts.append(int(selected[lab.residual_ids].sum()))
        per_structure = np.asarray(counts, dtype=np.int64)
    return CoverageStats(
        per_camera_covered=covered,
        saturated=saturated,
        num_saturated=int(saturated.sum()),
        per_structure_selected=per_structure,
        retained_fraction=len(rows) / model.num_points if model.num_points else 0.0,
    )
