"""Self-describing binary container used at every stage boundary.

Layout (all integers little-endian)::

    b"PANENS\\x00\\x01"            8-byte magic
    u32 manifest_length
    manifest                        UTF-8 JSON, keys sorted
    section*                        u64 length + raw bytes

The manifest lists each section as ``{name, offset, length, dtype, shape}``
with ``offset`` relative to the first byte after the manifest (pointing at the
section's length prefix). Unknown manifest keys are ignored on read.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .ensemble import AugmentationSpec
from .errors import ContainerError
from .fusion import CategoryTable, PanopticVideo, Segment
from .mask_core import BinaryMask, Dims, MaskTube
from .metrics import GroundTruthVideo, GtSegment
from .tracker import FrameQuerySet, QueryTrack, TrackSet

MAGIC = b"PANENS\x00\x01"
VERSION = 1


@dataclass
class QueryVideo:
    """Frame-level segmenter output for one video (input to tracking)."""

    video_id: str
    num_categories: int
    frames: list[FrameQuerySet]

    @property
    def dims(self) -> Dims:
        return self.frames[0].dims


@dataclass
class Container:
    kind: str
    payload: Any
    manifest: dict = field(default_factory=dict)

    @property
    def categories(self) -> CategoryTable | None:
        cats = self.manifest.get("categories")
        return CategoryTable.from_json(cats) if cats else None

    @property
    def augmentation(self) -> AugmentationSpec | None:
        aug = self.manifest.get("augmentation")
        return AugmentationSpec.from_json(aug) if aug else None


class _Writer:
    def __init__(self):
        self.chunks: list[bytes] = []
        self.sections: list[dict] = []
        self.offset = 0

    def add(self, name: str, array: np.ndarray, dtype: str) -> None:
        data = np.ascontiguousarray(array, dtype=dtype).tobytes()
        self.sections.append(
            {"name": name, "offset": self.offset, "length": len(data), "dtype": dtype, "shape": list(np.shape(array))}
        )
        self.chunks.append(struct.pack("<Q", len(data)) + data)
        self.offset += 8 + len(data)

    def finish(self, manifest: dict) -> bytes:
        manifest = dict(manifest, version=VERSION, sections=self.sections)
        head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return MAGIC + struct.pack("<I", len(head)) + head + b"".join(self.chunks)


def _rle(mask: BinaryMask) -> np.ndarray:
    return np.asarray(mask.runs, dtype=np.uint32)


def dumps(payload, *, categories: CategoryTable | None = None, **meta) -> bytes:
    """Serialize a TrackSet, QueryVideo, PanopticVideo or GroundTruthVideo."""
    w = _Writer()
    manifest: dict = {k: v for k, v in meta.items() if v is not None}
    if isinstance(manifest.get("augmentation"), AugmentationSpec):
        manifest["augmentation"] = manifest["augmentation"].to_json()
    if "members" in manifest:
        manifest["members"] = [m.to_json() if isinstance(m, AugmentationSpec) else m for m in manifest["members"]]
    if categories is not None:
        manifest["categories"] = categories.to_json()

    if isinstance(payload, TrackSet):
        manifest.update(
            kind="tracks",
            video_id=payload.video_id,
            dims=[payload.dims.height, payload.dims.width],
            length=payload.length,
            num_categories=payload.num_categories,
            tracks=[{"track_id": t.track_id, "source_tag": t.source_tag} for t in payload],
        )
        for i, t in enumerate(payload):
            w.add(f"tracks/{i}/mask_logits", t.mask_logits, "<f4")
            w.add(f"tracks/{i}/class_logits", t.class_logits, "<f4")
    elif isinstance(payload, QueryVideo):
        manifest.update(
            kind="frames",
            video_id=payload.video_id,
            dims=[payload.dims.height, payload.dims.width],
            length=len(payload.frames),
            num_categories=payload.num_categories,
            frames=[{"frame_index": f.frame_index, "num_queries": len(f)} for f in payload.frames],
        )
        for i, f in enumerate(payload.frames):
            w.add(f"frames/{i}/mask_logits", f.mask_logits, "<f4")
            w.add(f"frames/{i}/class_logits", f.class_logits, "<f4")
    elif isinstance(payload, PanopticVideo):
        manifest.update(
            kind="panoptic",
            video_id=payload.video_id,
            dims=[payload.dims.height, payload.dims.width],
            length=payload.length,
            segments=[
                {
                    "id": s.id,
                    "category_id": s.category_id,
                    "is_thing": s.is_thing,
                    "instance_id": s.instance_id,
                    "track_ids": list(s.track_ids),
                }
                for s in payload.segments.values()
            ],
        )
        for t in range(payload.length):
            w.add(f"frames/{t}/semantic", payload.semantic[t], "<u2")
            w.add(f"frames/{t}/instance", payload.instance[t], "<u2")
    elif isinstance(payload, GroundTruthVideo):
        manifest.update(
            kind="ground_truth",
            video_id=payload.video_id,
            dims=[payload.dims.height, payload.dims.width],
            length=payload.length,
            segments=[
                {"id": s.segment_id, "category_id": s.category_id, "is_thing": s.is_thing} for s in payload.segments
            ],
        )
        for i, s in enumerate(payload.segments):
            for t, m in enumerate(s.masks.frames):
                w.add(f"segments/{i}/{t}", _rle(m), "<u4")
        for t, m in enumerate(payload.void.frames):
            w.add(f"void/{t}", _rle(m), "<u4")
    else:
        raise TypeError(f"cannot serialize {type(payload).__name__}")
    return w.finish(manifest)


def _sections(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(blob) < 12 or blob[:8] != MAGIC:
        raise ContainerError("not a panens container (bad magic)")
    (head_len,) = struct.unpack_from("<I", blob, 8)
    start = 12 + head_len
    if start > len(blob):
        raise ContainerError("truncated manifest")
    try:
        manifest = json.loads(blob[12:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"unreadable manifest: {exc}") from None
    if not isinstance(manifest, dict) or "version" not in manifest:
        raise ContainerError("manifest has no version field")
    if manifest["version"] > VERSION:
        raise ContainerError(f"container version {manifest['version']} is newer than supported ({VERSION})")
    arrays = {}
    expected = 0
    for sec in manifest.get("sections", []):
        off = start + sec["offset"]
        if sec["offset"] != expected or off + 8 > len(blob):
            raise ContainerError(f"section {sec['name']}: inconsistent offset")
        (length,) = struct.unpack_from("<Q", blob, off)
        if length != sec["length"] or off + 8 + length > len(blob):
            raise ContainerError(f"section {sec['name']}: length prefix disagrees with manifest")
        data = np.frombuffer(blob, dtype=sec["dtype"], count=length // np.dtype(sec["dtype"]).itemsize, offset=off + 8)
        try:
            arrays[sec["name"]] = data.reshape(sec["shape"])
        except ValueError:
            raise ContainerError(f"section {sec['name']}: shape {sec['shape']} does not fit {data.size} values") from None
        expected = sec["offset"] + 8 + length
    if start + expected != len(blob):
        raise ContainerError("trailing bytes after last section")
    return manifest, arrays


def loads(blob: bytes) -> Container:
    manifest, arrays = _sections(blob)
    kind = manifest.get("kind")
    try:
        if kind == "tracks":
            dims = Dims(*manifest["dims"])
            tracks = [
                QueryTrack(
                    info["track_id"],
                    arrays[f"tracks/{i}/mask_logits"].astype(np.float32),
                    arrays[f"tracks/{i}/class_logits"].astype(np.float32),
                    info.get("source_tag", "original"),
                )
                for i, info in enumerate(manifest["tracks"])
            ]
            payload = TrackSet(manifest["video_id"], dims, manifest["length"], manifest["num_categories"], tracks)
        elif kind == "frames":
            frames = [
                FrameQuerySet(
                    info["frame_index"],
                    arrays[f"frames/{i}/mask_logits"].astype(np.float32),
                    arrays[f"frames/{i}/class_logits"].astype(np.float32),
                )
                for i, info in enumerate(manifest["frames"])
            ]
            payload = QueryVideo(manifest["video_id"], manifest["num_categories"], frames)
        elif kind == "panoptic":
            dims = Dims(*manifest["dims"])
            T = manifest["length"]
            shape = (T, *dims.shape)
            semantic = np.stack([arrays[f"frames/{t}/semantic"] for t in range(T)]) if T else np.zeros(shape)
            instance = np.stack([arrays[f"frames/{t}/instance"] for t in range(T)]) if T else np.zeros(shape)
            segments = {
                s["id"]: Segment(s["id"], s["category_id"], s["is_thing"], s["instance_id"], tuple(s.get("track_ids", ())))
                for s in manifest["segments"]
            }
            payload = PanopticVideo(semantic, instance, segments, manifest["video_id"])
        elif kind == "ground_truth":
            dims = Dims(*manifest["dims"])
            T = manifest["length"]

            def tube(prefix):
                return MaskTube(dims, [BinaryMask(dims, arrays[f"{prefix}/{t}"].tolist()) for t in range(T)])

            segments = [
                GtSegment(s["id"], s["category_id"], s["is_thing"], tube(f"segments/{i}"))
                for i, s in enumerate(manifest["segments"])
            ]
            payload = GroundTruthVideo(dims, T, segments, tube("void"), manifest["video_id"])
        else:
            raise ContainerError(f"unknown container kind {kind!r}")
    except KeyError as exc:
        raise ContainerError(f"missing field or section {exc}") from None
    return Container(kind, payload, manifest)


def write(path, payload, **meta) -> Path:
    path = Path(path)
    path.write_bytes(dumps(payload, **meta))
    return path


def read(path) -> Container:
    return loads(Path(path).read_bytes())
