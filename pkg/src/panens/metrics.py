"""Video panoptic quality over k-frame windows, and segmentation-and-tracking quality.

Both metrics work from one intermediate: for every frame, a confusion table of
pixel counts between predicted segments (plus a VOID row) and ground-truth
segments (plus a VOID column). Windowed tube statistics are then sums of
consecutive tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import DimsMismatch, InvalidWindow, LengthMismatch
from .fusion import VOID, PanopticVideo
from .mask_core import Dims, MaskTube

DEFAULT_WINDOWS = (1, 2, 4, 6)
MATCH_IOU = 0.5


@dataclass(frozen=True)
class GtSegment:
    segment_id: int
    category_id: int
    is_thing: bool
    masks: MaskTube


@dataclass
class GroundTruthVideo:
    """Segment-level annotation. Pixels in no segment count as VOID."""

    dims: Dims
    length: int
    segments: list[GtSegment]
    void: MaskTube
    video_id: str = "video"

    def __post_init__(self):
        for s in self.segments:
            if s.masks.dims != self.dims:
                raise DimsMismatch(f"segment {s.segment_id}: {s.masks.dims} vs {self.dims}")
            if len(s.masks) != self.length:
                raise LengthMismatch(f"segment {s.segment_id}: {len(s.masks)} frames vs {self.length}")
        if len(self.void) != self.length or self.void.dims != self.dims:
            raise DimsMismatch("void tube does not match the video")

    @cached_property
    def index_map(self) -> np.ndarray:
        """Per-pixel index into ``segments``, ``-1`` for VOID, ``(T, H, W)``."""
        out = np.full((self.length, *self.dims.shape), -1, dtype=np.int64)
        for i, s in enumerate(self.segments):
            out[s.masks.to_dense()] = i
        out[self.void.to_dense()] = -1
        return out

    @classmethod
    def from_dense(cls, index_map: np.ndarray, segments: Sequence[tuple[int, int, bool]], video_id="video"):
        """Build from an index map (``-1`` = VOID) and ``(segment_id, category_id, is_thing)`` rows."""
        index_map = np.asarray(index_map)
        segs = [
            GtSegment(sid, cat, thing, MaskTube.from_dense(index_map == i))
            for i, (sid, cat, thing) in enumerate(segments)
        ]
        return cls(Dims.of(index_map), index_map.shape[0], segs, MaskTube.from_dense(index_map < 0), video_id)

    @classmethod
    def from_panoptic(cls, video: PanopticVideo) -> "GroundTruthVideo":
        ids = video.segment_ids()
        uniq = [int(s) for s in np.unique(ids) if s >= 0]
        lookup = {s: i for i, s in enumerate(uniq)}
        index_map = np.full(ids.shape, -1, dtype=np.int64)
        for s, i in lookup.items():
            index_map[ids == s] = i
        rows = []
        for s in uniq:
            cat, inst = s >> 16, s & 0xFFFF
            seg = video.segments.get(s)
            rows.append((s, cat, seg.is_thing if seg else inst > 0))
        return cls.from_dense(index_map, rows, video.video_id)

    def to_panoptic(self) -> PanopticVideo:
        """Thing instances are numbered 1.. in segment order; stuff gets instance 0."""
        from .fusion import Segment, segment_id

        shape = (self.length, *self.dims.shape)
        semantic = np.full(shape, VOID, dtype=np.uint16)
        instance = np.zeros(shape, dtype=np.uint16)
        registry = {}
        idx = self.index_map
        next_instance = 1
        for i, s in enumerate(self.segments):
            inst = 0
            if s.is_thing:
                inst, next_instance = next_instance, next_instance + 1
            region = idx == i
            if not region.any():
                continue
            semantic[region] = s.category_id
            instance[region] = inst
            sid = segment_id(s.category_id, inst)
            registry[sid] = Segment(sid, s.category_id, s.is_thing, inst)
        return PanopticVideo(semantic, instance, dict(sorted(registry.items())), self.video_id)


@dataclass
class PqStat:
    iou_sum: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __iadd__(self, other: "PqStat"):
        self.iou_sum += other.iou_sum
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        return self

    @property
    def pq(self) -> float:
        denom = self.tp + 0.5 * self.fp + 0.5 * self.fn
        return self.iou_sum / denom if denom else 0.0


@dataclass
class SegmentMatch:
    pairs: list[tuple[int, int, float]]  # (pred segment id, gt segment id, tube IoU)
    false_positives: list[int]
    false_negatives: list[int]
    stats: dict[int, PqStat]


@dataclass
class VpqReport:
    vpq_k: dict[int, float]
    vpq: float
    per_category: dict[int, dict[int, float]] = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"vpq": self.vpq}
        out.update({f"vpq{k}": v for k, v in self.vpq_k.items()})
        return out


@dataclass
class StqReport:
    aq: float
    sq: float
    stq: float


class _Confusion:
    """Pixel counts between predicted and GT segments, one table per frame."""

    def __init__(self, pred: PanopticVideo, gt: GroundTruthVideo):
        if pred.dims != gt.dims:
            raise DimsMismatch(f"prediction {pred.dims} vs ground truth {gt.dims}")
        if pred.length != gt.length:
            raise LengthMismatch(f"prediction has {pred.length} frames, ground truth {gt.length}")
        ids = pred.segment_ids()
        self.pred_ids = [int(s) for s in np.unique(ids) if s >= 0]
        self.pred_cat = np.array([s >> 16 for s in self.pred_ids], dtype=np.int64)
        self.pred_thing = np.array(
            [pred.segments[s].is_thing if s in pred.segments else (s & 0xFFFF) > 0 for s in self.pred_ids], dtype=bool
        )
        self.gt_ids = [s.segment_id for s in gt.segments]
        self.gt_cat = np.array([s.category_id for s in gt.segments], dtype=np.int64)
        self.gt_thing = np.array([s.is_thing for s in gt.segments], dtype=bool)
        n_p, n_g = len(self.pred_ids), len(self.gt_ids)
        self.n_pred, self.n_gt = n_p, n_g

        # VOID gets the last index on both axes
        p_idx = np.searchsorted(np.array(self.pred_ids, dtype=np.int64), ids) if n_p else np.zeros(ids.shape, np.int64)
        p_idx = np.where(ids < 0, n_p, p_idx)
        g_idx = np.where(gt.index_map < 0, n_g, gt.index_map)
        flat = (p_idx * (n_g + 1) + g_idx).reshape(pred.length, -1)
        size = (n_p + 1) * (n_g + 1)
        self.tables = np.stack([np.bincount(f, minlength=size) for f in flat]).reshape(pred.length, n_p + 1, n_g + 1)
        self.length = pred.length

    def window(self, start: int, stop: int) -> np.ndarray:
        return self.tables[start:stop].sum(axis=0)


def _match_window(conf: _Confusion, table: np.ndarray) -> SegmentMatch:
    n_p, n_g = conf.n_pred, conf.n_gt
    inter = table[:n_p, :n_g]
    gt_area = table[:, :n_g].sum(axis=0)
    pred_total = table[:n_p, :].sum(axis=1)
    pred_in_void = table[:n_p, n_g]
    pred_area = pred_total - pred_in_void

    stats: dict[int, PqStat] = {}
    pairs = []
    matched_p = np.zeros(n_p, dtype=bool)
    matched_g = np.zeros(n_g, dtype=bool)
    for p, g in zip(*np.nonzero(inter)):
        if conf.pred_cat[p] != conf.gt_cat[g]:
            continue
        i = inter[p, g]
        iou = i / (pred_area[p] + gt_area[g] - i)
        if iou > MATCH_IOU:
            matched_p[p] = matched_g[g] = True
            pairs.append((conf.pred_ids[p], conf.gt_ids[g], float(iou)))
            st = stats.setdefault(int(conf.gt_cat[g]), PqStat())
            st.tp += 1
            st.iou_sum += float(iou)
    fns = []
    for g in range(n_g):
        if gt_area[g] > 0 and not matched_g[g]:
            fns.append(conf.gt_ids[g])
            stats.setdefault(int(conf.gt_cat[g]), PqStat()).fn += 1
    fps = []
    for p in range(n_p):
        if pred_total[p] == 0 or matched_p[p]:
            continue
        # predictions lying mostly on unlabeled ground truth are not penalized
        if pred_in_void[p] / pred_total[p] > MATCH_IOU:
            continue
        fps.append(conf.pred_ids[p])
        stats.setdefault(int(conf.pred_cat[p]), PqStat()).fp += 1
    pairs.sort()
    return SegmentMatch(pairs, sorted(fps), sorted(fns), dict(sorted(stats.items())))


def match_segments(pred: PanopticVideo, gt: GroundTruthVideo, start: int = 0, stop: int | None = None) -> SegmentMatch:
    """Tube matching over frames ``[start, stop)``: same category and IoU > 0.5.

    IoU ignores predicted pixels that fall on ground-truth VOID.
    """
    conf = _Confusion(pred, gt)
    stop = conf.length if stop is None else stop
    if not 0 <= start < stop <= conf.length:
        raise InvalidWindow(f"window [{start}, {stop}) outside video of {conf.length} frames")
    return _match_window(conf, conf.window(start, stop))


def _windows(length: int, k: int) -> list[tuple[int, int]]:
    if k < 1:
        raise InvalidWindow(f"window length must be >= 1, got {k}")
    if length < 1:
        raise InvalidWindow("video has no frames")
    if length <= k:
        return [(0, length)]
    return [(s, s + k) for s in range(length - k + 1)]


def _vpq_from_confusion(conf: _Confusion, k: int) -> tuple[float, dict[int, float]]:
    window_scores = []
    per_cat: dict[int, list[float]] = {}
    for start, stop in _windows(conf.length, k):
        stats = _match_window(conf, conf.window(start, stop)).stats
        if not stats:
            continue
        scores = [st.pq for st in stats.values()]
        for cat, st in stats.items():
            per_cat.setdefault(cat, []).append(st.pq)
        window_scores.append(math.fsum(scores) / len(scores))
    if not window_scores:
        # nothing labeled and nothing predicted anywhere
        return 1.0, {}
    return math.fsum(window_scores) / len(window_scores), {c: math.fsum(v) / len(v) for c, v in sorted(per_cat.items())}


def vpq_k(pred: PanopticVideo, gt: GroundTruthVideo, k: int) -> float:
    """Mean over all k-frame windows (stride 1) of the category-averaged PQ."""
    return _vpq_from_confusion(_Confusion(pred, gt), k)[0]


def vpq_mean(pred: PanopticVideo, gt: GroundTruthVideo, windows: Sequence[int] = DEFAULT_WINDOWS) -> VpqReport:
    conf = _Confusion(pred, gt)
    values, per_category = {}, {}
    for k in windows:
        values[k], per_category[k] = _vpq_from_confusion(conf, k)
    mean = sum(values.values()) / len(values)
    return VpqReport(values, mean, per_category)


def _stq_from_confusion(conf: _Confusion) -> StqReport:
    n_p, n_g = conf.n_pred, conf.n_gt
    table = conf.window(0, conf.length)
    inter = table[:n_p, :n_g]
    gt_area = table[:, :n_g].sum(axis=0)
    pred_area = table[:n_p, :n_g].sum(axis=1)  # GT-VOID pixels excluded

    ious = []
    for cat in sorted(set(conf.pred_cat.tolist()) | set(conf.gt_cat.tolist())):
        p_sel = conf.pred_cat == cat
        g_sel = conf.gt_cat == cat
        i = inter[np.ix_(p_sel, g_sel)].sum()
        union = pred_area[p_sel].sum() + gt_area[g_sel].sum() - i
        if union > 0:
            ious.append(i / union)
    sq = math.fsum(ious) / len(ious) if ious else 1.0

    thing_p = np.flatnonzero(conf.pred_thing & (pred_area > 0))
    thing_g = np.flatnonzero(conf.gt_thing & (gt_area > 0))
    if thing_g.size == 0:
        aq = 0.0 if thing_p.size else 1.0
    else:
        per_gt = []
        for g in thing_g:
            acc = 0.0
            for p in thing_p:
                tpa = inter[p, g]
                if tpa:
                    acc += tpa * (tpa / (pred_area[p] + gt_area[g] - tpa))
            per_gt.append(acc / gt_area[g])
        aq = math.fsum(per_gt) / len(per_gt)
    return StqReport(float(aq), float(sq), math.sqrt(aq * sq))


def stq(pred: PanopticVideo, gt: GroundTruthVideo) -> StqReport:
    return _stq_from_confusion(_Confusion(pred, gt))


def evaluate(pred: PanopticVideo, gt: GroundTruthVideo, windows: Sequence[int] = DEFAULT_WINDOWS) -> dict:
    """VPQ and STQ together, fractional and percentage, as printed by the CLI."""
    conf = _Confusion(pred, gt)
    values = {k: _vpq_from_confusion(conf, k)[0] for k in windows}
    vpq = sum(values.values()) / len(values)
    s = _stq_from_confusion(conf)
    report = {"vpq": vpq, **{f"vpq{k}": v for k, v in values.items()}, "stq": s.stq, "aq": s.aq, "sq": s.sq}
    return {
        "video_id": pred.video_id,
        "fraction": report,
        "percent": {key: 100.0 * v for key, v in report.items()},
    }
