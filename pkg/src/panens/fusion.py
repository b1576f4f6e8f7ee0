"""Decode a track set into a per-pixel panoptic labeling."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ClassLogitLengthMismatch
from .mask_core import Dims
from .tracker import TrackSet, softmax

VOID = 0xFFFF  # semantic id of unlabeled pixels (fits the u16 wire form)


def segment_id(category_id: int, instance_id: int) -> int:
    return (int(category_id) << 16) | int(instance_id)


@dataclass(frozen=True)
class CategoryTable:
    is_thing: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "is_thing", tuple(bool(x) for x in self.is_thing))
        if not self.is_thing:
            raise ValueError("category table is empty")
        if len(self.is_thing) >= VOID:
            raise ValueError("too many categories for 16-bit labels")

    def __len__(self):
        return len(self.is_thing)

    @property
    def count(self) -> int:
        return len(self.is_thing)

    @property
    def thing_ids(self) -> list[int]:
        return [i for i, t in enumerate(self.is_thing) if t]

    @property
    def stuff_ids(self) -> list[int]:
        return [i for i, t in enumerate(self.is_thing) if not t]

    @classmethod
    def split(cls, n_things: int, n_stuff: int) -> "CategoryTable":
        """Things take ids ``0..n_things-1``, stuff the rest."""
        return cls((True,) * n_things + (False,) * n_stuff)

    def to_json(self) -> list:
        return [[i, t] for i, t in enumerate(self.is_thing)]

    @classmethod
    def from_json(cls, entries) -> "CategoryTable":
        ids = [int(e[0]) for e in entries]
        if ids != list(range(len(ids))):
            raise ValueError("category ids must be contiguous from 0")
        return cls(tuple(bool(e[1]) for e in entries))


# 124 categories: 58 thing, 66 stuff
VIPSEG_CATEGORIES = CategoryTable.split(58, 66)


@dataclass(frozen=True)
class FusionConfig:
    min_object_score: float = 0.3
    min_pixel_score: float = 0.25
    min_overlap_ratio: float = 0.8

    def __post_init__(self):
        for name in ("min_object_score", "min_pixel_score", "min_overlap_ratio"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class Segment:
    id: int
    category_id: int
    is_thing: bool
    instance_id: int
    track_ids: tuple[str, ...] = field(default=(), compare=False)


@dataclass(frozen=True)
class PanopticFrame:
    dims: Dims
    semantic: np.ndarray  # (H, W) uint16, VOID where unlabeled
    instance: np.ndarray  # (H, W) uint16, 0 for stuff and VOID


@dataclass
class PanopticVideo:
    """Semantic and instance ids per pixel, ``(T, H, W)`` uint16 each."""

    semantic: np.ndarray
    instance: np.ndarray
    segments: dict[int, Segment] = field(default_factory=dict)
    video_id: str = "video"

    def __post_init__(self):
        self.semantic = np.asarray(self.semantic, dtype=np.uint16)
        self.instance = np.asarray(self.instance, dtype=np.uint16)
        if self.semantic.shape != self.instance.shape or self.semantic.ndim != 3:
            raise ValueError("semantic and instance must be matching (T, H, W) arrays")

    @property
    def dims(self) -> Dims:
        return Dims.of(self.semantic)

    @property
    def length(self) -> int:
        return self.semantic.shape[0]

    def frame(self, t: int) -> PanopticFrame:
        return PanopticFrame(self.dims, self.semantic[t], self.instance[t])

    def segment_ids(self) -> np.ndarray:
        """Per-pixel segment id, ``-1`` on VOID."""
        ids = (self.semantic.astype(np.int64) << 16) | self.instance
        return np.where(self.semantic == VOID, -1, ids)

    def equals(self, other: "PanopticVideo") -> bool:
        return (
            np.array_equal(self.semantic, other.semantic)
            and np.array_equal(self.instance, other.instance)
            and self.segments == other.segments
        )


def _assign(logits: list[np.ndarray], scores: np.ndarray, candidates: list[int], shape, min_pixel: float) -> np.ndarray:
    # Running argmax over tracks; strict ">" keeps the lowest index on ties.
    owner = np.full(shape, -1, dtype=np.int64)
    best = np.full(shape, -np.inf)
    for i in candidates:
        value = scores[i] * expit(logits[i].astype(np.float64))
        win = value > best
        best[win] = value[win]
        owner[win] = i
    owner[best < min_pixel] = -1
    return owner


def fuse(tracks: TrackSet, cats: CategoryTable, fcfg: FusionConfig = FusionConfig()) -> PanopticVideo:
    shape = (tracks.length, *tracks.dims.shape)
    n_cls = cats.count
    for t in tracks:
        if len(t.class_logits) != n_cls + 1:
            raise ClassLogitLengthMismatch(
                f"track {t.track_id}: {len(t.class_logits)} class logits for {n_cls} categories"
            )
    if not len(tracks):
        return PanopticVideo(np.full(shape, VOID, np.uint16), np.zeros(shape, np.uint16), {}, tracks.video_id)

    probs = softmax(np.stack([t.class_logits for t in tracks]))
    category = probs[:, :n_cls].argmax(axis=1)
    score = probs[np.arange(len(tracks)), category]
    is_object = probs.argmax(axis=1) != n_cls
    kept = [i for i in range(len(tracks)) if is_object[i] and score[i] >= fcfg.min_object_score]

    logits = [t.mask_logits for t in tracks]
    owner = _assign(logits, score, kept, shape, fcfg.min_pixel_score)

    claimed = np.bincount(owner[owner >= 0], minlength=len(tracks))
    survivors = []
    for i in kept:
        support = np.count_nonzero(logits[i] > 0)
        if support > 0 and claimed[i] >= fcfg.min_overlap_ratio * support:
            survivors.append(i)
    if survivors != kept:
        owner = _assign(logits, score, survivors, shape, fcfg.min_pixel_score)

    semantic = np.full(shape, VOID, dtype=np.uint16)
    instance = np.zeros(shape, dtype=np.uint16)
    segments: dict[int, Segment] = {}
    next_instance = 1
    for i in survivors:
        cat = int(category[i])
        region = owner == i
        if cats.is_thing[cat]:
            inst = next_instance
            next_instance += 1
            if inst >= VOID:
                raise ValueError("too many thing instances for 16-bit ids")
        else:
            inst = 0
        if not region.any():
            continue
        semantic[region] = cat
        instance[region] = inst
        sid = segment_id(cat, inst)
        prior = segments.get(sid)
        track_ids = (prior.track_ids if prior else ()) + (tracks.tracks[i].track_id,)
        segments[sid] = Segment(sid, cat, bool(cats.is_thing[cat]), inst, track_ids)
    return PanopticVideo(semantic, instance, dict(sorted(segments.items())), tracks.video_id)


def segment_color(sid: int) -> tuple[int, int, int]:
    """Deterministic RGB for a segment id; never black (black is VOID)."""
    from .synth import mix64

    h = mix64(sid + 1)
    rgb = ((h >> 16) & 0xFF, (h >> 8) & 0xFF, h & 0xFF)
    return rgb if any(rgb) else (1, 1, 1)


def render_frames(video: PanopticVideo) -> list[np.ndarray]:
    ids = video.segment_ids()
    out = []
    for t in range(video.length):
        image = np.zeros((*video.dims.shape, 3), dtype=np.uint8)
        for sid in np.unique(ids[t]):
            if sid < 0:
                continue
            image[ids[t] == sid] = segment_color(int(sid))
        out.append(image)
    return out


def ppm_bytes(image: np.ndarray) -> bytes:
    h, w = image.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(image, dtype=np.uint8).tobytes()


def render_ppm(video: PanopticVideo, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, image in enumerate(render_frames(video)):
        path = out_dir / f"{video.video_id}_{t:05d}.ppm"
        path.write_bytes(ppm_bytes(image))
        paths.append(path)
    return paths
