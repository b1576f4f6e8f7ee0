"""Acceptance gate: one PASS/FAIL line per criterion, printed in the summary."""

import itertools
import json
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_trackset
from test_container import _random_payload, CATS as CONTAINER_CATS
from test_metrics import _brute_pairs, _random_instance
from panens import container
from panens.assignment import hungarian_solve
from panens.cli import main
from panens.ensemble import AugmentationSpec, align_member, ensemble_pipeline, query_wise_merge
from panens.fusion import VIPSEG_CATEGORIES, CategoryTable, fuse
from panens.mask_core import Dims, hflip, resize_bilinear
from panens.metrics import evaluate, match_segments, stq, vpq_mean
from panens.scenarios import edge_case, identity_swap_case, recovery_case
from panens.synth import CorruptionSpec, SceneSpec, corrupt, generate
from panens.tracker import QueryTrack, TrackSet, build_tracks, split_frames


def record(number, title, passed, detail):
    ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'} [{number:>2}] {title}: {detail}")
    assert passed, detail


def _vpq(tracks, gt):
    return vpq_mean(fuse(tracks, VIPSEG_CATEGORIES), gt).vpq


def test_01_hungarian_optimality():
    rng = np.random.default_rng(1)
    mismatches = 0
    start = time.perf_counter()
    for _ in range(1000):
        n = int(rng.integers(1, 8))
        c = rng.random((n, n)) * 100
        got = hungarian_solve(c).total_cost
        best = min(sum(float(c[i, p[i]]) for i in range(n)) for p in itertools.permutations(range(n)))
        mismatches += got != best
    elapsed = time.perf_counter() - start
    record(1, "Hungarian optimality", mismatches == 0 and elapsed < 10,
           f"{mismatches}/1000 cost mismatches (tol 0), {elapsed:.2f}s incl. brute force (< 10s)")


def test_02_metric_identity():
    rng = np.random.default_rng(2)
    worst = 0.0
    start = time.perf_counter()
    for i in range(50):
        spec = SceneSpec(
            seed=int(rng.integers(0, 2**63)),
            height=int(rng.integers(16, 64)),
            width=int(rng.integers(16, 64)),
            length=int(rng.integers(1, 9)),
            n_things=int(rng.integers(0, 6)),
            n_stuff_bands=int(rng.integers(0, 4)),
        )
        gt, ideal = generate(spec)
        pred = fuse(ideal, spec.categories)
        r = vpq_mean(pred, gt)
        s = stq(pred, gt)
        worst = max(worst, *(abs(1.0 - v) for v in r.vpq_k.values()), abs(1.0 - s.stq))
    elapsed = time.perf_counter() - start
    record(2, "Metric identity", worst <= 1e-9 and elapsed < 60,
           f"max |1 - metric| = {worst:.3g} over 50 scenes (tol 1e-9), {elapsed:.2f}s (< 60s)")


def test_03_matching_oracle():
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(500):
        pred, gt, idx = _random_instance(rng, max_side=16, max_frames=4)
        start = int(rng.integers(0, gt.length))
        stop = int(rng.integers(start + 1, gt.length + 1))
        got = [(p, g) for p, g, _ in match_segments(pred, gt, start, stop).pairs]
        bad += got != _brute_pairs(pred, gt, idx, start, stop)
    record(3, "Matching-oracle equivalence", bad == 0, f"{bad}/500 pair sets differ from exhaustive search (tol 0)")


def test_04_self_merge_fusion():
    rng = np.random.default_rng(4)
    cats = CategoryTable.split(4, 2)
    differing = 0
    for i in range(50):
        if i % 2:
            p = random_trackset(rng, n_cls=6, length=int(rng.integers(1, 5)))
            table = cats
        else:
            _, ideal = generate(SceneSpec(seed=i, height=24, width=32))
            p = corrupt(ideal, CorruptionSpec(boundary_jitter_px=1, logit_noise_sigma=2.0), i)
            table = VIPSEG_CATEGORIES
        differing += not fuse(query_wise_merge(p, p), table).equals(fuse(p, table))
    record(4, "Ensemble self-identity", differing == 0, f"{differing}/50 track sets change under self-merge")


def test_05_missed_object_recovery():
    wins, unrecovered = 0, []
    for seed in range(30):
        case = recovery_case(seed)
        merged = query_wise_merge(case.reference, case.member)
        before, after = _vpq(case.reference, case.gt), _vpq(merged, case.gt)
        wins += after > before
        pairs = match_segments(fuse(merged, VIPSEG_CATEGORIES), case.gt).pairs
        if not any(g == case.dropped_segment and iou > 0.5 for _, g, iou in pairs):
            unrecovered.append(seed)
    record(5, "Missed-object recovery", wins >= 28 and not unrecovered,
           f"ensemble beats reference in {wins}/30 scenes (need >= 28); "
           f"dropped object matched with tube IoU > 0.5 in {30 - len(unrecovered)}/30")


def test_06_edge_refinement():
    ref_scores, ens_scores = [], []
    for seed in range(30):
        case = edge_case(seed, jitter=2)
        ref_scores.append(_vpq(case.reference, case.gt))
        ens_scores.append(_vpq(query_wise_merge(case.reference, case.member), case.gt))
    wins = sum(e > r for e, r in zip(ens_scores, ref_scores))
    mean_r, mean_e = float(np.mean(ref_scores)), float(np.mean(ens_scores))
    record(6, "Edge-refinement direction", wins >= 20 and mean_e >= mean_r,
           f"{wins}/30 wins (need >= 20), mean VPQ {mean_r:.4f} -> {mean_e:.4f}")


def test_07_window_pattern():
    failures = []
    shown = None
    for seed in range(10):
        gt, _, swapped = identity_swap_case(seed)
        v = vpq_mean(fuse(swapped, VIPSEG_CATEGORIES), gt).vpq_k
        shown = shown or v
        if not (v[1] > v[2] >= v[4] >= v[6]):
            failures.append(seed)
    detail = ", ".join(f"vpq{k}={shown[k]:.4f}" for k in (1, 2, 4, 6))
    record(7, "Window-pattern sanity", not failures,
           f"vpq1 > vpq2 >= vpq4 >= vpq6 on {10 - len(failures)}/10 swap scenes (seed 0: {detail})")


def test_08_tta_alignment():
    rng = np.random.default_rng(8)
    grid = rng.normal(size=(3, 9, 13)).astype(np.float32)
    involution = np.array_equal(hflip(hflip(grid)), grid)
    ref, big = Dims(720, 1280), Dims.short_side(Dims(720, 1280), 800)
    const_ok = True
    for c in (0.0, -6.0, 0.1, 3.75, 1e-3):
        g = np.full(ref.shape, c, np.float32)
        back = resize_bilinear(resize_bilinear(g, big), ref)
        const_ok &= bool((back == np.float32(c)).all())
    unchanged = 0
    for seed in range(10):
        _, ideal = generate(SceneSpec(seed=seed, height=24, width=40))
        p = corrupt(ideal, CorruptionSpec(boundary_jitter_px=1, logit_noise_sigma=1.0), seed)
        flipped = p.with_tracks([QueryTrack(t.track_id, hflip(t.mask_logits), t.class_logits, "hflip") for t in p])
        merged = ensemble_pipeline(p, [(flipped, AugmentationSpec("hflip", p.dims))])
        unchanged += fuse(merged, VIPSEG_CATEGORIES).equals(fuse(p, VIPSEG_CATEGORIES))
    record(8, "TTA alignment exactness", involution and const_ok and unchanged == 10,
           f"hflip involution {involution}; 720->800->720 constants exact {const_ok}; "
           f"flipped self-member leaves fusion unchanged {unchanged}/10")


def _pipeline(root, capsys):
    spec = root / "scene.json"
    spec.write_text(json.dumps({"seed": 17, "height": 36, "width": 48, "length": 6, "n_things": 3, "video_id": "v"}))
    noise = root / "noise.json"
    noise.write_text(json.dumps({"boundary_jitter_px": 1, "logit_noise_sigma": 1.0, "drop_track_prob": 0.2}))
    steps = [
        ["synth", spec, "--out", root / "a", "--corruption", noise, "--seed", 1],
        ["synth", spec, "--out", root / "b", "--corruption", noise, "--seed", 2],
        ["track", root / "a" / "v.frames.pnc", "--out", root / "ta.pnc"],
        ["track", root / "b" / "v.frames.pnc", "--out", root / "tb.pnc"],
        ["ensemble", root / "ta.pnc", "--member", f"{root / 'tb.pnc'}:contrast", "--out", root / "e.pnc"],
        ["fuse", root / "e.pnc", "--out", root / "p.pnc"],
        ["render", root / "p.pnc", "--out", root / "img"],
    ]
    for argv in steps:
        assert main([str(a) for a in argv]) == 0
    capsys.readouterr()
    assert main(["eval", str(root / "p.pnc"), str(root / "a" / "v.gt.pnc")]) == 0
    report = capsys.readouterr().out
    files = {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
    return files, report


def test_09_determinism_and_format(tmp_path, capsys):
    (tmp_path / "r1").mkdir()
    (tmp_path / "r2").mkdir()
    f1, rep1 = _pipeline(tmp_path / "r1", capsys)
    f2, rep2 = _pipeline(tmp_path / "r2", capsys)
    same_files = f1.keys() == f2.keys() and all(f1[k] == f2[k] for k in f1)
    n_ppm = sum(k.endswith(".ppm") for k in f1)
    rng = np.random.default_rng(9)
    round_trip_failures = 0
    for i in range(200):
        payload = _random_payload(rng, i)
        blob = container.dumps(payload, categories=CONTAINER_CATS)
        round_trip_failures += container.dumps(container.loads(blob).payload, categories=CONTAINER_CATS) != blob
    record(9, "Determinism & format", same_files and rep1 == rep2 and n_ppm == 6 and round_trip_failures == 0,
           f"{len(f1)} files byte-identical {same_files} ({n_ppm} PPMs), reports identical {rep1 == rep2}, "
           f"container round trip failures {round_trip_failures}/200")


def test_10_performance():
    spec = SceneSpec(seed=10, height=180, width=320, length=10, n_things=6, n_stuff_bands=3, n_queries=20)
    gt, ideal = generate(spec)
    frames = split_frames(corrupt(ideal, CorruptionSpec(boundary_jitter_px=1, logit_noise_sigma=1.0), 1), order_seed=3)
    flip_src = corrupt(ideal, CorruptionSpec(boundary_jitter_px=1, logit_noise_sigma=1.0), 2)
    flipped = flip_src.with_tracks([QueryTrack(t.track_id, hflip(t.mask_logits), t.class_logits) for t in flip_src])
    scale_src = corrupt(ideal, CorruptionSpec(boundary_jitter_px=1, logit_noise_sigma=1.0), 3)
    big = Dims.short_side(spec.dims, 200)
    scaled = TrackSet(spec.name, big, spec.length, scale_src.num_categories,
                      [QueryTrack(t.track_id, resize_bilinear(t.mask_logits, big), t.class_logits) for t in scale_src])
    bright = corrupt(ideal, CorruptionSpec(boundary_jitter_px=1, logit_noise_sigma=1.0), 4)
    members = [
        (flipped, AugmentationSpec("hflip", spec.dims)),
        (scaled, AugmentationSpec("rescale", big)),
        (bright, AugmentationSpec("identity", spec.dims)),
    ]
    start = time.perf_counter()
    tracks = build_tracks(frames, video_id=spec.name)
    merged = ensemble_pipeline(tracks, members)
    report = evaluate(fuse(merged, VIPSEG_CATEGORIES), gt)
    elapsed = time.perf_counter() - start
    record(10, "Performance envelope", elapsed < 5.0,
           f"track+ensemble(3)+fuse+eval on 10x180x320, 20 queries: {elapsed:.2f}s (< 5s), vpq {report['fraction']['vpq']:.3f}")
