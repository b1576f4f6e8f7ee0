"""Query-wise ensembling of set-prediction outputs.

A supplementary query whose thresholded mask overlaps an original query by
more than ``iou_threshold`` is averaged into it (mask logits and class logits,
in logit space); otherwise it is appended to the original set as a new
object. Augmented members are first mapped back to the reference geometry.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import ClassLogitLengthMismatch, DimsMismatch, LengthMismatch
from .mask_core import Dims, hflip, pairwise_iou, resize_bilinear
from .tracker import QueryTrack, TrackSet

log = logging.getLogger(__name__)

# Photometric test-time augmentations change the segmenter input only; their
# outputs are already in the reference geometry.
PHOTOMETRIC = ("brightness", "contrast")
KINDS = ("identity", "hflip", "rescale")

# Logit written into frames of an appended per-frame remainder that were
# absorbed elsewhere.
VACANT_LOGIT = -10.0


@dataclass(frozen=True)
class AugmentationSpec:
    kind: Literal["identity", "hflip", "rescale"]
    native_dims: Dims

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")

    @classmethod
    def parse(cls, name: str, native_dims: Dims) -> "AugmentationSpec":
        name = name.lower().replace("_", "-")
        if name in PHOTOMETRIC or name in ("original", "none"):
            name = "identity"
        if name in ("flip", "horizontal-flip"):
            name = "hflip"
        if name in ("scale", "multi-scale", "multiscale"):
            name = "rescale"
        return cls(name, native_dims)

    def to_json(self) -> dict:
        return {"kind": self.kind, "native_dims": [self.native_dims.height, self.native_dims.width]}

    @classmethod
    def from_json(cls, d: dict) -> "AugmentationSpec":
        return cls(d["kind"], Dims(*d["native_dims"]))


@dataclass(frozen=True)
class EnsembleConfig:
    iou_threshold: float = 0.5
    matching_level: Literal["tube", "per_frame"] = "tube"

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold must be in (0, 1], got {self.iou_threshold}")
        if self.matching_level not in ("tube", "per_frame"):
            raise ValueError(f"matching_level must be 'tube' or 'per_frame', got {self.matching_level!r}")


@dataclass
class MergeStats:
    merged: int = 0
    appended: int = 0
    # original track index -> number of supplementary queries absorbed
    absorbed: dict[int, int] = field(default_factory=dict)


def align_member(member: TrackSet, spec: AugmentationSpec, reference: Dims) -> TrackSet:
    """Map a member's mask logits back onto the reference frame geometry."""
    if member.dims != spec.native_dims:
        raise DimsMismatch(f"member dims {member.dims} != declared native dims {spec.native_dims}")
    if spec.kind == "identity":
        if member.dims != reference:
            raise DimsMismatch(f"identity member at {member.dims}, reference is {reference}")
        return member
    if spec.kind == "hflip":
        if member.dims != reference:
            raise DimsMismatch(f"hflip member at {member.dims}, reference is {reference}")
        tracks = [QueryTrack(t.track_id, hflip(t.mask_logits), t.class_logits, t.source_tag) for t in member]
        return TrackSet(member.video_id, reference, member.length, member.num_categories, tracks)
    tracks = [
        QueryTrack(t.track_id, resize_bilinear(t.mask_logits, reference), t.class_logits, t.source_tag)
        for t in member
    ]
    return TrackSet(member.video_id, reference, member.length, member.num_categories, tracks)


def _check_compatible(a: TrackSet, b: TrackSet) -> None:
    if a.dims != b.dims:
        raise DimsMismatch(f"{a.dims} vs {b.dims}")
    if a.length != b.length:
        raise LengthMismatch(f"{a.length} frames vs {b.length}")
    if a.num_categories != b.num_categories:
        raise ClassLogitLengthMismatch(f"{a.num_categories} categories vs {b.num_categories}")


def _fresh_id(base: str, taken: set[str]) -> str:
    candidate, n = base, 1
    while candidate in taken:
        candidate = f"{base}#{n}"
        n += 1
    taken.add(candidate)
    return candidate


class _Accumulator:
    """Running sums for the originals; the merged value is sum / count."""

    def __init__(self, original: TrackSet):
        self.original = original
        self.mask_sum = [t.mask_logits.astype(np.float64) for t in original]
        # per frame counts so per-frame matching can absorb into single frames
        self.mask_count = [np.ones(original.length) for _ in original]
        self.class_sum = [t.class_logits.astype(np.float64) for t in original]
        self.class_count = [1] * len(original)

    def mask_mean(self, i: int) -> np.ndarray:
        return (self.mask_sum[i] / self.mask_count[i][:, None, None]).astype(np.float32)

    def tracks(self) -> list[QueryTrack]:
        out = []
        for i, t in enumerate(self.original):
            if self.class_count[i] == 1 and (self.mask_count[i] == 1).all():
                out.append(t)
                continue
            classes = (self.class_sum[i] / self.class_count[i]).astype(np.float32)
            out.append(QueryTrack(t.track_id, self.mask_mean(i), classes, t.source_tag))
        return out


def _merge_tube(original: TrackSet, supplementary: TrackSet, threshold: float):
    acc = _Accumulator(original)
    stats = MergeStats()
    appended: list[QueryTrack] = []
    o_tubes = original.tubes()
    s_tubes = supplementary.tubes()
    iou = pairwise_iou(s_tubes, o_tubes) if len(original) else np.zeros((len(supplementary), 0))
    for k, s in enumerate(supplementary):
        row = iou[k]
        best = int(row.argmax()) if row.size else -1
        if best >= 0 and row[best] > threshold:
            acc.mask_sum[best] += s.mask_logits
            acc.mask_count[best] += 1
            acc.class_sum[best] += s.class_logits
            acc.class_count[best] += 1
            stats.merged += 1
            stats.absorbed[best] = stats.absorbed.get(best, 0) + 1
            # later supplementaries see the refined mask
            if k + 1 < len(supplementary):
                refined = acc.mask_mean(best) > 0
                iou[k + 1 :, best] = pairwise_iou(s_tubes[k + 1 :], refined[None])[:, 0]
        else:
            appended.append(s)
            stats.appended += 1
    return acc, appended, stats


def _merge_per_frame(original: TrackSet, supplementary: TrackSet, threshold: float):
    acc = _Accumulator(original)
    stats = MergeStats()
    appended: list[QueryTrack] = []
    frame_masks = original.tubes().transpose(1, 0, 2, 3).copy()  # (T, N, H, W)
    for s in supplementary:
        s_tube = s.tube
        partners: set[int] = set()
        leftover = np.zeros(original.length, dtype=bool)
        for t in range(original.length):
            if len(original):
                row = pairwise_iou(s_tube[t][None], frame_masks[t])[0]
                best = int(row.argmax())
            if len(original) and row[best] > threshold:
                acc.mask_sum[best][t] += s.mask_logits[t]
                acc.mask_count[best][t] += 1
                frame_masks[t, best] = (acc.mask_sum[best][t] / acc.mask_count[best][t]).astype(np.float32) > 0
                partners.add(best)
            elif s_tube[t].any():
                leftover[t] = True
        for best in sorted(partners):
            acc.class_sum[best] += s.class_logits
            acc.class_count[best] += 1
            stats.absorbed[best] = stats.absorbed.get(best, 0) + 1
        if partners:
            stats.merged += 1
        if not partners:
            appended.append(s)
            stats.appended += 1
        elif leftover.any():
            logits = s.mask_logits.copy()
            logits[~leftover] = VACANT_LOGIT
            appended.append(QueryTrack(s.track_id, logits, s.class_logits, s.source_tag))
            stats.appended += 1
    return acc, appended, stats


def query_wise_merge(
    original: TrackSet,
    supplementary: TrackSet,
    cfg: EnsembleConfig = EnsembleConfig(),
    *,
    return_stats: bool = False,
):
    """Merge ``supplementary`` into ``original``.

    Supplementary tracks are visited in order. Each is compared with every
    original track (tube IoU of thresholded masks, or frame-by-frame when
    ``cfg.matching_level == "per_frame"``); the best match, ties to the lowest
    index, absorbs it when IoU is strictly above the threshold. An original
    may absorb several supplementaries; its logits become the plain mean over
    itself and all of them, and later comparisons use its refined mask.
    Unmatched supplementaries are appended with fresh ids.
    """
    _check_compatible(original, supplementary)
    if cfg.matching_level == "tube":
        acc, appended, stats = _merge_tube(original, supplementary, cfg.iou_threshold)
    else:
        acc, appended, stats = _merge_per_frame(original, supplementary, cfg.iou_threshold)
    tracks = acc.tracks()
    taken = {t.track_id for t in tracks}
    for s in appended:
        tracks.append(QueryTrack(_fresh_id(f"{s.source_tag}:{s.track_id}", taken), s.mask_logits, s.class_logits, s.source_tag))
    out = original.with_tracks(tracks)
    return (out, stats) if return_stats else out


def ensemble_pipeline(
    reference: TrackSet,
    members: Sequence[tuple[TrackSet, AugmentationSpec]],
    cfg: EnsembleConfig = EnsembleConfig(),
    *,
    return_stats: bool = False,
):
    """Align each member to the reference geometry and fold it in, in list order."""
    result = reference
    all_stats = []
    for index, (member, spec) in enumerate(members):
        aligned = align_member(member, spec, reference.dims)
        result, stats = query_wise_merge(result, aligned, cfg, return_stats=True)
        log.debug("member %d (%s): %d merged, %d appended", index, spec.kind, stats.merged, stats.appended)
        all_stats.append(stats)
    return (result, all_stats) if return_stats else result
