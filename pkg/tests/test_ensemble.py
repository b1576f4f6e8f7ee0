import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_trackset
from panens.errors import DimsMismatch, LengthMismatch
from panens.ensemble import (
    VACANT_LOGIT,
    AugmentationSpec,
    EnsembleConfig,
    align_member,
    ensemble_pipeline,
    query_wise_merge,
)
from panens.mask_core import Dims, hflip
from panens.tracker import QueryTrack, TrackSet

D4 = Dims(4, 4)


def _ts(*tracks, dims=D4, length=1, n_cls=2):
    return TrackSet("v", dims, length, n_cls, list(tracks))


def _track(tid, logits, classes=(1.0, 0.0, 0.0), tag="original"):
    return QueryTrack(tid, np.asarray(logits, np.float32), np.asarray(classes, np.float32), tag)


def _coverage(ts):
    return ts.tubes().any(axis=0) if len(ts) else np.zeros((ts.length, *ts.dims.shape), bool)


def test_config_validation():
    with pytest.raises(ValueError):
        EnsembleConfig(iou_threshold=0.0)
    with pytest.raises(ValueError):
        EnsembleConfig(iou_threshold=1.5)
    with pytest.raises(ValueError):
        EnsembleConfig(matching_level="pixel")
    assert EnsembleConfig(iou_threshold=1.0).iou_threshold == 1.0


def test_parse_augmentation_names():
    d = Dims(4, 6)
    assert AugmentationSpec.parse("brightness", d).kind == "identity"
    assert AugmentationSpec.parse("contrast", d).kind == "identity"
    assert AugmentationSpec.parse("flip", d).kind == "hflip"
    assert AugmentationSpec.parse("multi-scale", d).kind == "rescale"
    with pytest.raises(ValueError):
        AugmentationSpec.parse("rotate", d)
    spec = AugmentationSpec("rescale", d)
    assert AugmentationSpec.from_json(spec.to_json()) == spec


def test_align_identity_is_same_object(rng):
    ts = random_trackset(rng)
    assert align_member(ts, AugmentationSpec("identity", ts.dims), ts.dims) is ts


def test_align_hflip_twice_restores(rng):
    ts = random_trackset(rng)
    spec = AugmentationSpec("hflip", ts.dims)
    twice = align_member(align_member(ts, spec, ts.dims), spec, ts.dims)
    for a, b in zip(twice, ts):
        assert np.array_equal(a.mask_logits, b.mask_logits)
        assert np.array_equal(a.class_logits, b.class_logits)


def test_align_rescale_to_reference(rng):
    member = random_trackset(rng, dims=Dims(16, 28))
    out = align_member(member, AugmentationSpec("rescale", Dims(16, 28)), Dims(12, 21))
    assert out.dims == Dims(12, 21)
    assert all(t.mask_logits.shape == (member.length, 12, 21) for t in out)
    for a, b in zip(out, member):
        assert np.array_equal(a.class_logits, b.class_logits)


def test_align_dims_errors(rng):
    ts = random_trackset(rng)
    with pytest.raises(DimsMismatch):
        align_member(ts, AugmentationSpec("hflip", Dims(3, 3)), ts.dims)
    with pytest.raises(DimsMismatch):
        align_member(ts, AugmentationSpec("identity", ts.dims), Dims(5, 5))


def test_merge_constant_grids_average():
    o = _track("o", np.full((1, 4, 4), 2.0), (4.0, 0.0, 0.0))
    s = _track("s", np.full((1, 4, 4), 0.5), (0.0, 2.0, 0.0))
    out, stats = query_wise_merge(_ts(o), _ts(s), return_stats=True)
    assert len(out) == 1
    assert (out.tracks[0].mask_logits == 1.25).all()
    assert np.array_equal(out.tracks[0].class_logits, [2.0, 1.0, 0.0])
    assert (stats.merged, stats.appended) == (1, 0)


def test_merge_spec_example_constant_two_and_zero():
    # a zero grid thresholds to empty, so use a touching positive value for the
    # same support and check the mean formula on the logits themselves
    o = _track("o", np.full((1, 4, 4), 2.0))
    s = _track("s", np.full((1, 4, 4), 1e-30))
    out = query_wise_merge(_ts(o), _ts(s))
    assert np.allclose(out.tracks[0].mask_logits, 1.0, atol=0)


def test_disjoint_supplementary_appends():
    a = np.full((1, 4, 4), -3.0)
    a[0, :2] = 3.0
    b = -a
    out, stats = query_wise_merge(_ts(_track("o", a)), _ts(_track("o", b, tag="flip")), return_stats=True)
    assert len(out) == 2
    assert (stats.merged, stats.appended) == (0, 1)
    assert out.tracks[1].track_id == "flip:o"
    assert out.tracks[1].source_tag == "flip"
    assert np.array_equal(out.tracks[1].mask_logits, b.astype(np.float32))
    cov = _coverage(out)
    assert cov.all() and cov.sum() > _coverage(_ts(_track("o", a))).sum()


def test_threshold_is_strict():
    a = np.full((1, 4, 4), -1.0)
    a[0, :, :2] = 1.0  # 8 pixels
    b = np.full((1, 4, 4), -1.0)
    b[0, :, 1:3] = 1.0  # overlap 4, union 12 -> 1/3
    out = query_wise_merge(_ts(_track("o", a)), _ts(_track("s", b)), EnsembleConfig(iou_threshold=1 / 3))
    assert len(out) == 2


def test_threshold_one_never_merges_generic(rng):
    p = random_trackset(rng, n_tracks=4)
    q = random_trackset(rng, n_tracks=3)
    out = query_wise_merge(p, q, EnsembleConfig(iou_threshold=1.0))
    assert len(out) == 7


def test_argmax_tie_picks_lowest_index():
    s = np.full((1, 4, 4), -1.0)
    s[0, 1:3, 1:3] = 1.0
    o = s.copy()
    out = query_wise_merge(_ts(_track("a", o * 2), _track("b", o * 3)), _ts(_track("s", s)), return_stats=True)
    assert out[1].absorbed == {0: 1}


def test_multiple_absorption_is_plain_mean():
    o = np.full((1, 4, 4), 4.0)
    s1 = np.full((1, 4, 4), 1.0)
    s2 = np.full((1, 4, 4), 1.0)
    out, stats = query_wise_merge(_ts(_track("o", o)), _ts(_track("s1", s1), _track("s2", s2)), return_stats=True)
    assert stats.absorbed == {0: 2}
    assert (out.tracks[0].mask_logits == 2.0).all()


def test_refined_mask_is_used_for_later_supplementaries():
    # o covers cols 0-3; s1 covers cols 0-2 with strong negative on col 3, so the
    # merged mask shrinks to cols 0-2. s2 == cols 0-1: IoU 8/16 vs original (not >0.5)
    # but 8/12 vs the refined mask.
    o = np.full((1, 4, 4), 1.0)
    s1 = np.full((1, 4, 4), 1.0)
    s1[0, :, 3] = -5.0
    s2 = np.full((1, 4, 4), -1.0)
    s2[0, :, :2] = 1.0
    out, stats = query_wise_merge(_ts(_track("o", o)), _ts(_track("s1", s1), _track("s2", s2)), return_stats=True)
    assert stats.absorbed == {0: 2}
    assert len(out) == 1


def test_mismatched_sets_raise(rng):
    a = random_trackset(rng, length=3)
    with pytest.raises(LengthMismatch):
        query_wise_merge(a, random_trackset(rng, length=2))
    with pytest.raises(DimsMismatch):
        query_wise_merge(a, random_trackset(rng, length=3, dims=Dims(5, 5)))


def test_self_merge_identity(rng):
    for _ in range(20):
        p = random_trackset(rng)
        out = query_wise_merge(p, p)
        assert len(out) == len(p)
        for a, b in zip(out, p):
            assert np.array_equal(a.mask_logits, b.mask_logits)
            assert np.array_equal(a.class_logits, b.class_logits)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["tube", "per_frame"]))
def test_append_soundness(seed, level):
    rng = np.random.default_rng(seed)
    p = random_trackset(rng, length=2)
    q = random_trackset(rng, length=2)
    out, stats = query_wise_merge(p, q, EnsembleConfig(matching_level=level), return_stats=True)
    assert len(out) == len(p) + stats.appended
    ids = {t.track_id for t in p}
    for t in out.tracks[len(p):]:
        assert t.track_id not in ids
    if level == "tube":
        # every appended track is a verbatim supplementary
        supp = {t.mask_logits.tobytes() for t in q}
        assert all(t.mask_logits.tobytes() in supp for t in out.tracks[len(p):])
        assert stats.merged + stats.appended == len(q)


def test_per_frame_absorbs_frames_and_keeps_leftovers():
    o = np.full((2, 4, 4), -2.0)
    o[0, :2] = 2.0  # present only on frame 0
    s = np.full((2, 4, 4), -2.0)
    s[:, :2] = 2.0  # present on both frames
    cfg = EnsembleConfig(matching_level="per_frame")
    out, stats = query_wise_merge(_ts(_track("o", o), length=2), _ts(_track("s", s), length=2), cfg, return_stats=True)
    assert (stats.merged, stats.appended) == (1, 1)
    assert np.array_equal(out.tracks[0].mask_logits[0], o[0].astype(np.float32))
    leftover = out.tracks[1].mask_logits
    assert (leftover[0] == VACANT_LOGIT).all()
    assert np.array_equal(leftover[1], s[1].astype(np.float32))
    # tube IoU is 8/16, not above 0.5, so tube mode appends the whole track
    tube = query_wise_merge(_ts(_track("o", o), length=2), _ts(_track("s", s), length=2))
    assert len(tube) == 2


def test_pipeline_folds_in_order(rng):
    ref = random_trackset(rng, n_tracks=3)
    flipped = TrackSet(
        ref.video_id,
        ref.dims,
        ref.length,
        ref.num_categories,
        [QueryTrack(t.track_id, hflip(t.mask_logits), t.class_logits, "flip") for t in ref],
    )
    out, stats = ensemble_pipeline(ref, [(flipped, AugmentationSpec("hflip", ref.dims))], return_stats=True)
    assert (stats[0].merged, stats[0].appended) == (3, 0)
    for a, b in zip(out, ref):
        assert np.array_equal(a.mask_logits, b.mask_logits)


def test_member_order_both_recover():
    from panens.fusion import VIPSEG_CATEGORIES, fuse
    from panens.metrics import match_segments
    from panens.scenarios import MEMBER_NOISE, recovery_case
    from panens.synth import corrupt

    case = recovery_case(4)
    second = corrupt(case.member, MEMBER_NOISE, 99)
    spec = AugmentationSpec("identity", case.reference.dims)
    for members in ([(case.member, spec), (second, spec)], [(second, spec), (case.member, spec)]):
        merged = ensemble_pipeline(case.reference, members)
        pairs = match_segments(fuse(merged, VIPSEG_CATEGORIES), case.gt).pairs
        assert any(g == case.dropped_segment and iou > 0.5 for _, g, iou in pairs)
