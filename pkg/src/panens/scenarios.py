"""Seeded experiment setups used by the acceptance suite and scripts/."""

from __future__ import annotations

from dataclasses import dataclass

from .fusion import VIPSEG_CATEGORIES
from .mask_core import iou_tube
from .metrics import GroundTruthVideo
from .synth import CorruptionSpec, SceneSpec, corrupt, generate, integers
from .tracker import TrackSet

# mild, independent per-member damage: what two runs of a real model disagree on
MEMBER_NOISE = CorruptionSpec(boundary_jitter_px=1, logit_noise_sigma=1.0)


@dataclass
class EnsembleCase:
    gt: GroundTruthVideo
    reference: TrackSet
    member: TrackSet
    dropped_segment: int | None = None


def base_scene(seed: int, **overrides) -> SceneSpec:
    params = dict(seed=seed, height=48, width=64, length=6, n_things=3, n_stuff_bands=2)
    params.update(overrides)
    return SceneSpec(**params)


def recovery_case(seed: int, noise: CorruptionSpec = MEMBER_NOISE) -> EnsembleCase:
    """Reference misses one thing; the supplementary member still has it."""
    gt, ideal = generate(base_scene(seed))
    member = corrupt(ideal, noise, 2 * seed + 2)
    # ideal tracks are ordered like the GT segments and noise never drops any,
    # so track i of the member is its copy of segment i. Only things the member
    # actually segments (tube IoU > 0.5) are eligible; a sliver that noise has
    # already destroyed in the member is not something it can supply.
    things = [i for i, s in enumerate(gt.segments) if s.is_thing]
    present = [i for i in things if iou_tube(member.tracks[i].tube, gt.segments[i].masks.to_dense()) > 0.5]
    pool = present or things
    pick = pool[int(integers(seed, ("recovery-pick",), 0, len(pool) - 1, 1)[0])]
    reference = corrupt(ideal, noise, 2 * seed + 1)
    reference = reference.with_tracks([t for i, t in enumerate(reference.tracks) if i != pick])
    return EnsembleCase(gt, reference, member, gt.segments[pick].segment_id)


def edge_case(seed: int, jitter: int = 2) -> EnsembleCase:
    """Reference and member carry independent boundary errors of up to ``jitter`` px."""
    gt, ideal = generate(base_scene(seed))
    spec = CorruptionSpec(boundary_jitter_px=jitter)
    return EnsembleCase(gt, corrupt(ideal, spec, 2 * seed + 1), corrupt(ideal, spec, 2 * seed + 2))


def identity_swap_case(seed: int, length: int = 10, swap_at: int = 5) -> tuple[GroundTruthVideo, TrackSet, TrackSet]:
    """Two same-category things whose predicted identities exchange mid-video.

    Returns ``(gt, ideal, swapped)``; every single frame of ``swapped`` is
    still a perfect segmentation.
    """
    cat = VIPSEG_CATEGORIES.thing_ids[seed % len(VIPSEG_CATEGORIES.thing_ids)]
    spec = base_scene(
        seed,
        length=length,
        n_things=2,
        n_stuff_bands=1,
        thing_categories=[cat, cat],
        velocities=[(0.5, 0.25), (-0.5, -0.25)],
        starts=[(24.0, 16.0), (24.0, 48.0)],
        sizes=[(16.0, 14.0), (14.0, 16.0)],
        shapes=["rect", "rect"],
    )
    gt, ideal = generate(spec)
    swapped = corrupt(ideal, CorruptionSpec(id_swap_at_frame=swap_at, swap_pair=(0, 1)), seed)
    return gt, ideal, swapped


def crossing_case(seed: int, length: int = 8) -> tuple[GroundTruthVideo, TrackSet]:
    """Two things of different categories passing each other horizontally."""
    things = VIPSEG_CATEGORIES.thing_ids
    a = things[seed % len(things)]
    b = things[(seed + 7) % len(things)]
    spec = SceneSpec(
        seed=seed,
        height=32,
        width=48,
        length=length,
        n_things=2,
        n_stuff_bands=1,
        thing_categories=[a, b],
        velocities=[(4.0, 0.0), (-4.0, 0.0)],
        starts=[(12.0, 6.0), (20.0, 42.0)],
        sizes=[(12.0, 10.0), (12.0, 12.0)],
        shapes=["rect", "ellipse"],
    )
    return generate(spec)
