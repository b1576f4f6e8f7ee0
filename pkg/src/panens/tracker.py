"""Adjacent-frame query association and video-level track sets."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .assignment import Assignment, hungarian_solve
from .errors import (
    ClassLogitLengthMismatch,
    DimsMismatch,
    InconsistentQueryCount,
    LengthMismatch,
)
from .mask_core import Dims, pairwise_iou

CLASS_COST_WEIGHT = 0.5


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class FrameQuerySet:
    """Per-frame segmenter output: ``mask_logits`` is ``(N, H, W)``, ``class_logits`` ``(N, C+1)``."""

    frame_index: int
    mask_logits: np.ndarray
    class_logits: np.ndarray

    def __post_init__(self):
        self.mask_logits = np.asarray(self.mask_logits, dtype=np.float32)
        self.class_logits = np.asarray(self.class_logits, dtype=np.float32)
        if self.mask_logits.ndim != 3 or self.class_logits.ndim != 2:
            raise ValueError("expected (N, H, W) mask logits and (N, C+1) class logits")
        if len(self.mask_logits) != len(self.class_logits):
            raise InconsistentQueryCount(
                f"{len(self.mask_logits)} masks but {len(self.class_logits)} class vectors"
            )

    def __len__(self):
        return len(self.mask_logits)

    @property
    def dims(self) -> Dims:
        return Dims.of(self.mask_logits)


@dataclass
class QueryTrack:
    track_id: str
    mask_logits: np.ndarray  # (T, H, W) float32
    class_logits: np.ndarray  # (C+1,) float32
    source_tag: str = "original"

    def __post_init__(self):
        self.mask_logits = np.asarray(self.mask_logits, dtype=np.float32)
        self.class_logits = np.asarray(self.class_logits, dtype=np.float32)
        if self.mask_logits.ndim != 3:
            raise ValueError(f"track {self.track_id}: mask logits must be (T, H, W)")
        if not np.isfinite(self.class_logits).all():
            raise ValueError(f"track {self.track_id}: non-finite class logits")

    @property
    def tube(self) -> np.ndarray:
        return self.mask_logits > 0


@dataclass
class TrackSet:
    video_id: str
    dims: Dims
    length: int
    num_categories: int
    tracks: list[QueryTrack] = field(default_factory=list)

    def __post_init__(self):
        ids = [t.track_id for t in self.tracks]
        if len(set(ids)) != len(ids):
            raise ValueError("track ids must be unique")
        for t in self.tracks:
            if t.mask_logits.shape[1:] != self.dims.shape:
                raise DimsMismatch(f"track {t.track_id}: {t.mask_logits.shape[1:]} vs {self.dims.shape}")
            if len(t.mask_logits) != self.length:
                raise LengthMismatch(f"track {t.track_id}: {len(t.mask_logits)} frames vs {self.length}")
            if len(t.class_logits) != self.num_categories + 1:
                raise ClassLogitLengthMismatch(
                    f"track {t.track_id}: {len(t.class_logits)} class logits, expected {self.num_categories + 1}"
                )

    def __len__(self):
        return len(self.tracks)

    def __iter__(self):
        return iter(self.tracks)

    def with_tracks(self, tracks: Sequence[QueryTrack]) -> "TrackSet":
        return replace(self, tracks=list(tracks))

    def tubes(self) -> np.ndarray:
        """Thresholded masks of all tracks, ``(N, T, H, W)`` bool."""
        if not self.tracks:
            return np.zeros((0, self.length, *self.dims.shape), dtype=bool)
        return np.stack([t.tube for t in self.tracks])


def association_cost(prev: FrameQuerySet, curr: FrameQuerySet, class_weight: float = CLASS_COST_WEIGHT) -> np.ndarray:
    """Cost ``1 - mask IoU + w * (1 - cosine of class distributions)`` for every query pair."""
    if prev.dims != curr.dims:
        raise DimsMismatch(f"frame {prev.frame_index} {prev.dims} vs frame {curr.frame_index} {curr.dims}")
    if prev.class_logits.shape[1] != curr.class_logits.shape[1]:
        raise ClassLogitLengthMismatch("class logit lengths differ between frames")
    iou = pairwise_iou(prev.mask_logits > 0, curr.mask_logits > 0)
    p = softmax(prev.class_logits)
    q = softmax(curr.class_logits)
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    cosine = p @ q.T
    return (1.0 - iou) + class_weight * (1.0 - cosine)


def match_adjacent(prev: FrameQuerySet, curr: FrameQuerySet, class_weight: float = CLASS_COST_WEIGHT) -> Assignment:
    if len(prev) == 0 or len(curr) == 0:
        raise ValueError("cannot match an empty query set")
    return hungarian_solve(association_cost(prev, curr, class_weight))


def build_tracks(
    frames: Sequence[FrameQuerySet],
    video_id: str = "video",
    source_tag: str = "original",
    class_weight: float = CLASS_COST_WEIGHT,
) -> TrackSet:
    """Chain adjacent-frame assignments into N tracks of length T.

    Track ``k`` starts at query ``k`` of the first frame. Its class logits are
    the mean of the per-frame class vectors it collected.
    """
    if not frames:
        raise ValueError("need at least one frame")
    n = len(frames[0])
    for f in frames:
        if len(f) != n:
            raise InconsistentQueryCount(f"frame {f.frame_index} has {len(f)} queries, frame 0 has {n}")
        if f.dims != frames[0].dims:
            raise DimsMismatch(f"frame {f.frame_index} {f.dims} vs {frames[0].dims}")
        if f.class_logits.shape[1] != frames[0].class_logits.shape[1]:
            raise ClassLogitLengthMismatch(f"frame {f.frame_index} class logit length differs")
    num_categories = frames[0].class_logits.shape[1] - 1

    # chain[t, k] is the query index of frame t that belongs to track k
    chain = np.empty((len(frames), n), dtype=np.int64)
    chain[0] = np.arange(n)
    for t in range(1, len(frames)):
        if n == 0:
            continue
        step = np.empty(n, dtype=np.int64)
        for i, j in match_adjacent(frames[t - 1], frames[t], class_weight).pairs:
            step[i] = j
        chain[t] = step[chain[t - 1]]

    tracks = []
    for k in range(n):
        masks = np.stack([f.mask_logits[chain[t, k]] for t, f in enumerate(frames)])
        classes = np.mean([f.class_logits[chain[t, k]].astype(np.float64) for t, f in enumerate(frames)], axis=0)
        tracks.append(QueryTrack(f"q{k}", masks, classes.astype(np.float32), source_tag))
    return TrackSet(video_id, frames[0].dims, len(frames), num_categories, tracks)


def split_frames(tracks: TrackSet, order_seed: int | None = None) -> list[FrameQuerySet]:
    """Inverse of :func:`build_tracks`: one query set per frame.

    With ``order_seed`` the query order inside each frame is permuted, which is
    what a segmenter's unordered set output looks like.
    """
    from .synth import permutation  # local import: synth depends on this module

    out = []
    n = len(tracks)
    for t in range(tracks.length):
        order = np.arange(n) if order_seed is None else permutation(n, order_seed, t)
        masks = np.stack([tracks.tracks[k].mask_logits[t] for k in order]) if n else np.zeros((0, *tracks.dims.shape), np.float32)
        classes = (
            np.stack([tracks.tracks[k].class_logits for k in order])
            if n
            else np.zeros((0, tracks.num_categories + 1), np.float32)
        )
        out.append(FrameQuerySet(t, masks, classes))
    return out
