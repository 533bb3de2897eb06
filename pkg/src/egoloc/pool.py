"""Long-term model maintenance: verification, scoring, swapping, pruning.

One pool serves one local area. Exactly one model is active at a time; each
query view is verified against it by the correspondence/inlier criterion.
When enough recent views fail verification the pool re-scores every record
on the session's opening views and either swaps to the best-scoring model or
constructs a new one from the session. Records unused for longer than the
TTL are pruned (the active model is immune). Models are never merged.

Pool mutation is single-writer; per-view localization against the immutable
active index may run concurrently.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .compression import CompressedModel
from .errors import PoolEmptyError, RegistrationFailedError
from .matching import MatchIndex, MatchParams
from .model import PointCloudModel
from .pose import LocalizationResult, RansacParams, localize
from .synthetic import QueryView

# A record constructed from a session: the model (possibly compressed) plus
# its ready-to-serve match index.
ModelBuilder = Callable[["SessionBatch"], tuple[CompressedModel | PointCloudModel, MatchIndex]]


@dataclass
class ModelRecord:
    """One model of the area, with usage bookkeeping for pruning."""

    record_id: str
    model: CompressedModel | PointCloudModel
    index: MatchIndex
    created: float
    last_used: float
    condition: str = ""

    def __post_init__(self):
        if self.last_used < self.created:
            raise ValueError("last_used must not precede created")


@dataclass
class ModelPool:
    """Timestamped models for one area; exactly one active."""

    records: list[ModelRecord]
    active_id: str
    t1: int = 50
    t2: float = 0.5
    swap_threshold: float = 0.6
    invalid_window: int = 5
    invalid_quota: int = 3
    ttl: float = float("inf")

    def __post_init__(self):
        if not 0.0 < self.t2 <= 1.0:
            raise ValueError("t2 must be in (0, 1]")
        if self.invalid_quota < 1 or self.invalid_window < self.invalid_quota:
            raise ValueError("need 1 <= invalid_quota <= invalid_window")
        if self.ttl <= 0:
            raise ValueError("ttl must be positive")
        self.record(self.active_id)  # active id must resolve

    def record(self, record_id: str) -> ModelRecord:
        for r in self.records:
            if r.record_id == record_id:
                return r
        raise KeyError(f"no record '{record_id}' in pool")

    @property
    def active(self) -> ModelRecord:
        return self.record(self.active_id)


@dataclass
class SessionBatch:
    """Ordered query views of one session."""

    views: list[QueryView]
    timestamps: np.ndarray
    session_id: str = ""

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        if len(self.views) == 0:
            raise ValueError("session must contain at least one view")
        if len(self.timestamps) != len(self.views):
            raise ValueError("one timestamp required per view")
        if np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timestamps must be non-decreasing")


@dataclass
class PoolEvent:
    """One transition in the decision log."""

    kind: str  # "trigger" | "activate" | "new_model" | "prune"
    time: float
    details: dict = field(default_factory=dict)


@dataclass
class ServedView:
    """Per-view service outcome within a session."""

    view_index: int
    record_id: str
    result: LocalizationResult | None
    verified: bool


@dataclass
class SessionOutcome:
    """Decision log of one ingested session."""

    events: list[PoolEvent]
    served: list[ServedView]

    @property
    def num_triggers(self) -> int:
        return sum(1 for e in self.events if e.kind == "trigger")

    @property
    def num_new_models(self) -> int:
        return sum(1 for e in self.events if e.kind == "new_model")


def verify(result: LocalizationResult | None, t1: int = 50, t2: float = 0.5) -> bool:
    """Registration verification: ``N_c > T1`` and ``N_I / N_c > T2``.

    Both inequalities are strict; a failed registration (None) never
    verifies.
    """
    if result is None:
        return False
    if result.n_correspondences <= t1:
        return False
    return result.n_inliers / result.n_correspondences > t2


def _localize_or_none(
    view: QueryView,
    index: MatchIndex,
    match_params: MatchParams,
    ransac_params: RansacParams,
) -> LocalizationResult | None:
    try:
        return localize(view, index, match_params, ransac_params)
    except RegistrationFailedError:
        return None


def score_model(
    record: ModelRecord,
    views: Sequence[QueryView],
    match_params: MatchParams | None = None,
    ransac_params: RansacParams | None = None,
    *,
    t1: int = 50,
    t2: float = 0.5,
    num_views: int = 10,
) -> float:
    """Fraction of the session's first `num_views` views that verify."""
    match_params = match_params or MatchParams()
    ransac_params = ransac_params or RansacParams()
    prefix = list(views)[: max(num_views, 1)]
    if not prefix:
        raise ValueError("need at least one view to score")
    passed = 0
    for view in prefix:
        result = _localize_or_none(view, record.index, match_params, ransac_params)
        if verify(result, t1, t2):
            passed += 1
    return passed / len(prefix)


def prune(pool: ModelPool, now: float, ttl: float | None = None) -> list[str]:
    """Drop non-active records unused for longer than the TTL."""
    limit = pool.ttl if ttl is None else ttl
    if limit <= 0:
        raise ValueError("ttl must be positive")
    removed = [
        r.record_id
        for r in pool.records
        if r.record_id != pool.active_id and now - r.last_used > limit
    ]
    pool.records = [r for r in pool.records if r.record_id not in removed]
    return removed


def ingest_session(
    pool: ModelPool,
    session: SessionBatch,
    match_params: MatchParams | None = None,
    ransac_params: RansacParams | None = None,
    *,
    build_model_fn: ModelBuilder | None = None,
    score_views: int = 10,
) -> tuple[ModelPool, SessionOutcome]:
    """Serve a session through the pool, swapping models when the active
    one is judged invalid.

    Views are localized against the active model in order. Once
    `invalid_quota` of the last `invalid_window` views fail verification,
    all records are scored on the session's opening views: the best record
    is activated if its score reaches the swap threshold (ties go to the
    most recently used record), otherwise `build_model_fn` constructs a new
    model from the session, which joins the pool and becomes active. Stale
    records are pruned at the end.

    Raises:
        PoolEmptyError: the pool holds no records.
    """
    if not pool.records:
        raise PoolEmptyError("cannot ingest into an empty pool")
    match_params = match_params or MatchParams()
    ransac_params = ransac_params or RansacParams()

    events: list[PoolEvent] = []
    served: list[ServedView] = []
    window: deque[bool] = deque(maxlen=pool.invalid_window)
    swap_attempted = False

    for i, view in enumerate(session.views):
        now = float(session.timestamps[i])
        active = pool.active
        result = _localize_or_none(view, active.index, match_params, ransac_params)
        ok = verify(result, pool.t1, pool.t2)
        served.append(
            ServedView(view_index=i, record_id=active.record_id, result=result, verified=ok)
        )
        if ok:
            active.last_used = max(active.last_used, now)
        window.append(not ok)

        failures = sum(window)
        if failures >= pool.invalid_quota and not swap_attempted:
            swap_attempted = True
            events.append(
                PoolEvent(
                    kind="trigger",
                    time=now,
                    details={"view_index": i, "failures": failures, "window": len(window)},
                )
            )
            scores = {
                r.record_id: score_model(
                    r,
                    session.views,
                    match_params,
                    ransac_params,
                    t1=pool.t1,
                    t2=pool.t2,
                    num_views=score_views,
                )
                for r in pool.records
            }
            best_score = max(scores.values())
            if best_score >= pool.swap_threshold:
                # Ties between equal scores go to the most recently used record.
                candidates = [r for r in pool.records if scores[r.record_id] == best_score]
                chosen = max(candidates, key=lambda r: r.last_used)
                previous = pool.active_id
                pool.active_id = chosen.record_id
                chosen.last_used = max(chosen.last_used, now)
                events.append(
                    PoolEvent(
                        kind="activate",
                        time=now,
                        details={
                            "from": previous,
                            "to": chosen.record_id,
                            "score": best_score,
                            "reason": "swap",
                        },
                    )
                )
            elif build_model_fn is not None:
                model, index = build_model_fn(session)
                new_id = f"{session.session_id or 'session'}-new-{len(pool.records)}"
                record = ModelRecord(
                    record_id=new_id,
                    model=model,
                    index=index,
                    created=now,
                    last_used=now,
                )
                pool.records.append(record)
                previous = pool.active_id
                pool.active_id = new_id
                events.append(
                    PoolEvent(kind="new_model", time=now, details={"record_id": new_id})
                )
                events.append(
                    PoolEvent(
                        kind="activate",
                        time=now,
                        details={
                            "from": previous,
                            "to": new_id,
                            "score": best_score,
                            "reason": "new_model",
                        },
                    )
                )
            window.clear()

    end_time = float(session.timestamps[-1])
    pool.active.last_used = max(pool.active.last_used, end_time)
    removed = prune(pool, end_time)
    if removed:
        events.append(PoolEvent(kind="prune", time=end_time, details={"removed": removed}))
    return pool, SessionOutcome(events=events, served=served)
