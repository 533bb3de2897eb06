"""Model pool: verification criterion, scoring, swapping, pruning."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egoloc import (
    MatchParams,
    ModelPool,
    ModelRecord,
    RansacParams,
    SceneSpec,
    SessionBatch,
    build_index,
    build_model,
    generate_scene,
    ingest_session,
    prune,
    render_view,
    resample_descriptors,
    score_model,
    verify,
)
from egoloc.errors import PoolEmptyError
from egoloc.pose import LocalizationResult


def fake_result(n_c: int, n_i: int) -> LocalizationResult:
    from egoloc import CameraPose
    from conftest import unit_intrinsics

    return LocalizationResult(
        pose=CameraPose(rotation=np.eye(3), translation=np.zeros(3)),
        intrinsics=unit_intrinsics(),
        n_correspondences=n_c,
        n_inliers=n_i,
        inlier_point_ids=np.arange(n_i),
        mean_reprojection_error=1.0,
        timings={},
    )


class TestVerify:
    def test_paper_thresholds(self):
        assert verify(fake_result(60, 36), t1=50, t2=0.5) is True

    def test_boundary_nc_strict(self):
        assert verify(fake_result(50, 50), t1=50, t2=0.5) is False

    def test_boundary_ratio_strict(self):
        assert verify(fake_result(100, 50), t1=50, t2=0.5) is False

    def test_just_above_both(self):
        assert verify(fake_result(51, 26), t1=50, t2=0.5) is True

    def test_failure_is_false(self):
        assert verify(None) is False

    @given(
        n_c=st.integers(1, 500),
        n_i=st.integers(0, 500),
        bump=st.integers(0, 100),
    )
    @settings(max_examples=100, deadline=None)
    def test_monotone_in_inliers(self, n_c, n_i, bump):
        n_i = min(n_i, n_c)
        if verify(fake_result(n_c, n_i)):
            assert verify(fake_result(n_c, min(n_i + bump, n_c)))

    @given(n_c=st.integers(1, 200), scale=st.integers(1, 5))
    @settings(max_examples=50, deadline=None)
    def test_monotone_in_correspondences_at_fixed_ratio(self, n_c, scale):
        n_i = int(0.6 * n_c)
        if verify(fake_result(n_c, n_i)):
            assert verify(fake_result(n_c * scale, n_i * scale))


@pytest.fixture(scope="module")
def regime_world():
    """Shared geometry under three appearance regimes; pool holds A and B."""
    spec = SceneSpec(
        num_planes=2,
        num_lines=0,
        points_per_plane=220,
        num_clutter=40,
        num_cameras=5,
        descriptor_dim=16,
        descriptor_noise_sigma=0.02,
        pixel_noise_sigma=0.5,
        seed=70,
    )
    base = generate_scene(spec)
    scenes = {r: resample_descriptors(base, r) for r in (101, 202, 303)}
    records = {}
    for i, r in enumerate((101, 202)):
        model = build_model(scenes[r], 0.0, seed=r, model_id=f"regime-{r}")
        records[r] = ModelRecord(
            record_id=f"regime-{r}",
            model=model,
            index=build_index(model, 16, seed=1),
            created=float(i),
            last_used=float(i),
        )
    return scenes, records


def make_pool(records, active, **kwargs):
    defaults = dict(t1=50, t2=0.5, swap_threshold=0.6, invalid_window=5, invalid_quota=3)
    defaults.update(kwargs)
    return ModelPool(records=list(records), active_id=active, **defaults)


def session_views(scene, count, seed, start=100.0):
    views = [render_view(scene, i % scene.num_cameras, seed=seed + i) for i in range(count)]
    return SessionBatch(
        views=views, timestamps=start + np.arange(count, dtype=float), session_id=f"s{seed}"
    )


class TestScoreModel:
    def test_own_regime_scores_high(self, regime_world):
        scenes, records = regime_world
        session = session_views(scenes[101], 10, seed=500)
        score = score_model(records[101], session.views, MatchParams(), RansacParams(seed=1))
        assert score == 1.0

    def test_foreign_regime_scores_low(self, regime_world):
        scenes, records = regime_world
        session = session_views(scenes[303], 10, seed=600)
        score_own = score_model(records[101], session.views, MatchParams(), RansacParams(seed=1))
        assert score_own <= 0.2


class TestIngestSession:
    def test_matching_regime_no_swap(self, regime_world):
        scenes, records = regime_world
        pool = make_pool([records[101], records[202]], "regime-101")
        session = session_views(scenes[101], 8, seed=700)
        pool, outcome = ingest_session(pool, session, MatchParams(), RansacParams(seed=2))
        assert outcome.num_triggers == 0
        assert pool.active_id == "regime-101"
        assert all(sv.verified for sv in outcome.served)

    def test_shifted_regime_swaps_to_existing(self, regime_world):
        scenes, records = regime_world
        pool = make_pool([records[101], records[202]], "regime-101")
        session = session_views(scenes[202], 12, seed=800)
        pool, outcome = ingest_session(pool, session, MatchParams(), RansacParams(seed=3))
        assert outcome.num_triggers == 1
        assert pool.active_id == "regime-202"
        assert outcome.num_new_models == 0
        # Views after the swap verify against the swapped-in model.
        post_swap = [sv for sv in outcome.served if sv.record_id == "regime-202"]
        assert post_swap and all(sv.verified for sv in post_swap)

    def test_novel_regime_constructs_new_model(self, regime_world):
        scenes, records = regime_world
        pool = make_pool([records[101], records[202]], "regime-101")
        session = session_views(scenes[303], 12, seed=900)
        builds = []

        def builder(batch):
            builds.append(batch.session_id)
            model = build_model(scenes[303], 0.0, seed=303, model_id="regime-303")
            return model, build_index(model, 16, seed=1)

        pool, outcome = ingest_session(
            pool, session, MatchParams(), RansacParams(seed=4), build_model_fn=builder
        )
        assert outcome.num_new_models == 1
        assert len(builds) == 1
        assert len(pool.records) == 3
        assert pool.active_id.startswith("s900") or pool.active_id not in (
            "regime-101",
            "regime-202",
        )

    def test_empty_pool_rejected(self, regime_world):
        scenes, _ = regime_world
        session = session_views(scenes[101], 3, seed=123)
        pool = make_pool([], "missing") if False else None
        with pytest.raises((PoolEmptyError, KeyError)):
            bad = ModelPool.__new__(ModelPool)
            bad.records = []
            bad.active_id = "none"
            bad.t1, bad.t2 = 50, 0.5
            bad.swap_threshold, bad.invalid_window, bad.invalid_quota = 0.6, 5, 3
            bad.ttl = float("inf")
            ingest_session(bad, session)


class TestPrune:
    def test_fresh_records_kept(self, regime_world):
        _, records = regime_world
        pool = make_pool([records[101], records[202]], "regime-101", ttl=100.0)
        assert prune(pool, now=50.0) == []
        assert len(pool.records) == 2

    def test_stale_non_active_removed(self, regime_world):
        _, records = regime_world
        pool = make_pool([records[101], records[202]], "regime-101", ttl=10.0)
        removed = prune(pool, now=1000.0)
        assert removed == ["regime-202"]
        assert [r.record_id for r in pool.records] == ["regime-101"]

    def test_stale_active_immune(self, regime_world):
        _, records = regime_world
        pool = make_pool([records[101]], "regime-101", ttl=1.0)
        assert prune(pool, now=1e9) == []
        assert pool.records


class TestPoolValidation:
    def test_active_must_exist(self, regime_world):
        _, records = regime_world
        with pytest.raises(KeyError):
            make_pool([records[101]], "nope")

    def test_threshold_bounds(self, regime_world):
        _, records = regime_world
        with pytest.raises(ValueError):
            make_pool([records[101]], "regime-101", t2=0.0)

    def test_session_requires_views(self):
        with pytest.raises(ValueError):
            SessionBatch(views=[], timestamps=np.zeros(0))
