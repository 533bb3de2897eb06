"""Sequential RANSAC detection of planes and lines in a 3D point cloud.

Planes are detected first, one at a time; each accepted structure removes its
member points from the pool before the next round. Lines are then detected on
whatever the planes left behind, and the leftovers form a single residual
category. The resulting labeling drives the structure-aware compression
weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PlaneStructure:
    """Plane ``normal . x = offset`` with its member point ids."""

    normal: np.ndarray
    offset: float
    member_ids: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3).copy()
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        ids = np.asarray(self.member_ids, dtype=np.int64).reshape(-1).copy()
        n.flags.writeable = False
        ids.flags.writeable = False
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "member_ids", ids)

    def distances(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.abs(pts @ self.normal - self.offset)


@dataclass(frozen=True)
class LineStructure:
    """Line through `anchor` along unit `direction` with member point ids."""

    anchor: np.ndarray
    direction: np.ndarray
    member_ids: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64).reshape(3).copy()
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("line direction must be unit length")
        a = np.asarray(self.anchor, dtype=np.float64).reshape(3).copy()
        ids = np.asarray(self.member_ids, dtype=np.int64).reshape(-1).copy()
        for arr in (d, a, ids):
            arr.flags.writeable = False
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "anchor", a)
        object.__setattr__(self, "member_ids", ids)

    def distances(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        rel = pts - self.anchor
        along = rel @ self.direction
        perp = rel - np.outer(along, self.direction)
        return np.linalg.norm(perp, axis=1)


Structure = PlaneStructure | LineStructure


@dataclass
class StructureLabeling:
    """Partition of point ids into detected structures plus a residual group."""

    structures: list[Structure]
    residual_ids: np.ndarray
    num_points: int

    def __post_init__(self):
        self.residual_ids = np.asarray(self.residual_ids, dtype=np.int64).reshape(-1)
        counts = np.zeros(self.num_points, dtype=np.int64)
        for s in self.structures:
            counts[s.member_ids] += 1
        counts[self.residual_ids] += 1
        if not np.all(counts == 1):
            raise ValueError("structures and residual must partition the point ids")

    def labels(self) -> np.ndarray:
        """Per-point structure index; residual points get -1."""
        lab = -np.ones(self.num_points, dtype=np.int64)
        for idx, s in enumerate(self.structures):
            lab[s.member_ids] = idx
        return lab

    @property
    def num_structures(self) -> int:
        return len(self.structures)


@dataclass(frozen=True)
class DetectParams:
    """RANSAC parameters for structure detection.

    `min_members` of None applies the default policy max(20, 1% of N).
    """

    inlier_threshold: float = 0.05
    min_members: int | None = None
    max_iterations_per_structure: int = 1000
    max_structures: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")
        if self.max_iterations_per_structure < 1 or self.max_structures < 0:
            raise ValueError("iteration and structure budgets must be positive")

    def resolved_min_members(self, n_points: int, floor: int) -> int:
        if self.min_members is not None:
            if self.min_members < floor:
                raise ValueError(f"min_members must be >= {floor}")
            return self.min_members
        return max(20, int(np.ceil(0.01 * n_points)))


def _fit_plane(points: np.ndarray) -> tuple[np.ndarray, float] | None:
    """Least-squares plane through the points; None if they are collinear."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    # Normal = singular vector of the smallest singular value. A collinear
    # set has a vanishing second singular value and no unique plane.
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        return None
    normal = vt[-1]
    norm = np.linalg.norm(normal)
    if norm == 0:
        return None
    normal = normal / norm
    return normal, float(normal @ centroid)


def _fit_line(points: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
    """Least-squares line through the points; None if they coincide."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s[0] <= 1e-12:
        return None
    return centroid, vt[0] / np.linalg.norm(vt[0])


def _plane_distances(points: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    return np.abs(points @ normal - offset)


def _line_distances(points: np.ndarray, anchor: np.ndarray, direction: np.ndarray) -> np.ndarray:
    rel = points - anchor
    along = rel @ direction
    return np.linalg.norm(rel - np.outer(along, direction), axis=1)


def _members_collinear(
    points: np.ndarray,
    threshold: float,
    rng: np.random.Generator,
    fraction: float = 0.8,
    num_probes: int = 8,
) -> bool:
    """True when most points lie within `threshold` of one line.

    Guards plane detection against a degenerate consensus: any line plus a
    few stray points spans a perfect plane, which would swallow planted
    lines before line detection ever runs. Probes with a handful of 2-point
    member lines (a least-squares fit would be dragged off by the strays);
    a genuine plane has only a few percent of its members near any one line,
    so the 0.8 bar is conservative.
    """
    if len(points) < 3:
        return True
    for _ in range(num_probes):
        pick = rng.choice(len(points), size=2, replace=False)
        fit = _fit_line(points[pick])
        if fit is None:
            continue
        near = _line_distances(points, *fit) <= threshold
        if near.mean() >= fraction:
            return True
    return False


def _detect_one(
    points: np.ndarray,
    candidate_ids: np.ndarray,
    params: DetectParams,
    kind: str,
    round_index: int,
    min_members: int,
):
    """One RANSAC round over the remaining candidates.

    Hypotheses get counter-derived seeds so a parallel evaluation would
    reproduce the sequential winner: ties in inlier count go to the lowest
    hypothesis index. Degenerate samples (collinear plane draws, coincident
    line draws, plane consensus sets that are themselves collinear) are
    skipped but still consume iterations. Returns the structure or None.
    """
    sample_size = 3 if kind == "plane" else 2
    cand_pts = points[candidate_ids]
    n = len(candidate_ids)
    if n < sample_size:
        return None

    best_count = 0
    best_mask = None
    best_model = None
    for h in range(params.max_iterations_per_structure):
        rng = np.random.default_rng((params.seed, round_index, h))
        pick = rng.choice(n, size=sample_size, replace=False)
        sample = cand_pts[pick]
        if kind == "plane":
            model = _fit_plane(sample)
            if model is None:
                continue
            dists = _plane_distances(cand_pts, *model)
        else:
            model = _fit_line(sample)
            if model is None:
                continue
            dists = _line_distances(cand_pts, *model)
        mask = dists <= params.inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            if kind == "plane" and _members_collinear(
                cand_pts[mask],
                params.inlier_threshold,
                np.random.default_rng((params.seed, round_index, h, 1)),
            ):
                continue
            best_count = count
            best_mask = mask
            best_model = model

    if best_count < min_members or best_mask is None:
        return None
    member_ids = candidate_ids[best_mask]
    members = points[member_ids]

    # Refit on the members for accuracy; keep the hypothesis parameters if the
    # refit would push any member outside the inlier threshold.
    if kind == "plane":
        refit = _fit_plane(members)
        model = best_model
        if refit is not None and np.all(
            _plane_distances(members, *refit) <= params.inlier_threshold
        ):
            model = refit
        return PlaneStructure(normal=model[0], offset=model[1], member_ids=member_ids)
    refit = _fit_line(members)
    model = best_model
    if refit is not None and np.all(
        _line_distances(members, *refit) <= params.inlier_threshold
    ):
        model = refit
    return LineStructure(anchor=model[0], direction=model[1], member_ids=member_ids)


def _detect_kind(
    points: np.ndarray,
    candidate_ids: np.ndarray,
    params: DetectParams,
    kind: str,
    round_offset: int,
) -> tuple[list[Structure], np.ndarray]:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    min_members = params.resolved_min_members(len(pts), 3 if kind == "plane" else 2)
    found: list[Structure] = []
    remaining = np.asarray(candidate_ids, dtype=np.int64)
    for r in range(params.max_structures):
        structure = _detect_one(pts, remaining, params, kind, round_offset + r, min_members)
        if structure is None:
            break
        found.append(structure)
        keep = ~np.isin(remaining, structure.member_ids)
        remaining = remaining[keep]
    return found, remaining


def detect_planes(points: np.ndarray, params: DetectParams | None = None) -> list[PlaneStructure]:
    """Detect planes one at a time by best-of-N 3-point RANSAC hypotheses."""
    params = params or DetectParams()
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    found, _ = _detect_kind(pts, np.arange(len(pts)), params, "plane", 0)
    return found  # type: ignore[return-value]


def detect_lines(points: np.ndarray, params: DetectParams | None = None) -> list[LineStructure]:
    """Detect lines one at a time by best-of-N 2-point RANSAC hypotheses."""
    params = params or DetectParams()
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    found, _ = _detect_kind(pts, np.arange(len(pts)), params, "line", 0)
    return found  # type: ignore[return-value]


def detect_structures(points: np.ndarray, params: DetectParams | None = None) -> StructureLabeling:
    """Detect planes, then lines on the remaining points; leftovers are residual."""
    params = params or DetectParams()
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("point set must be non-empty")
    planes, remaining = _detect_kind(pts, np.arange(len(pts)), params, "plane", 0)
    lines, residual = _detect_kind(pts, remaining, params, "line", params.max_structures)
    return StructureLabeling(
        structures=[*planes, *lines], residual_ids=residual, num_points=len(pts)
    )
