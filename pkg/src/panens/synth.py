"""Deterministic synthetic videos and controllable prediction corruption.

Randomness comes from a counter-based splitmix64 stream: every draw is a pure
function of ``(seed, key, counter)``, so results do not depend on call order,
numpy version or platform.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import SpecInvalid
from .fusion import VIPSEG_CATEGORIES, CategoryTable, segment_id
from .mask_core import Dims
from .metrics import GroundTruthVideo
from .tracker import QueryTrack, TrackSet

MASK_LOGIT = 6.0
CLASS_LOGIT = 8.0

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


def mix64(x: int) -> int:
    """splitmix64 finalizer on a Python int."""
    z = x & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _key(seed: int, key: Sequence) -> int:
    state = mix64(seed & _MASK64)
    for part in key:
        if isinstance(part, str):
            part = zlib.crc32(part.encode())
        state = mix64(state ^ mix64(int(part) & _MASK64) + 0x9E3779B97F4A7C15)
    return state


def random_bits(seed: int, key: Sequence, n: int) -> np.ndarray:
    base = np.uint64(_key(seed, key))
    counters = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(base + counters * _GOLDEN)


def uniform(seed: int, key: Sequence, n: int) -> np.ndarray:
    """Floats in [0, 1) with 53 random bits."""
    return (random_bits(seed, key, n) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def normal(seed: int, key: Sequence, n: int) -> np.ndarray:
    """Standard normals by Box-Muller over two independent uniform streams."""
    u1 = 1.0 - uniform(seed, (*key, "u1"), n)
    u2 = uniform(seed, (*key, "u2"), n)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def integers(seed: int, key: Sequence, low: int, high: int, n: int) -> np.ndarray:
    """Integers in ``[low, high]`` (inclusive)."""
    return low + np.floor(uniform(seed, key, n) * (high - low + 1)).astype(np.int64)


def permutation(n: int, seed: int, *key) -> np.ndarray:
    return np.argsort(uniform(seed, ("perm", *key), n), kind="stable")


# -- scenes -------------------------------------------------------------------


@dataclass
class SceneSpec:
    seed: int = 0
    height: int = 48
    width: int = 64
    length: int = 6
    n_things: int = 3
    n_stuff_bands: int = 2
    # (dx, dy) in pixels per frame, one per thing; drawn from the seed when absent
    velocities: Optional[list] = None
    thing_categories: Optional[list] = None
    stuff_categories: Optional[list] = None
    shapes: Optional[list] = None  # "rect" | "ellipse" per thing
    starts: Optional[list] = None  # (cy, cx) at frame 0, per thing
    sizes: Optional[list] = None  # (h, w) per thing
    # pad the prediction with empty "no object" queries up to this count
    n_queries: Optional[int] = None
    video_id: Optional[str] = None
    categories: CategoryTable = field(default=VIPSEG_CATEGORIES, repr=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def bad(name, why):
            raise SpecInvalid(f"field '{name}': {why}")

        for name in ("height", "width", "length"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                bad(name, f"must be a positive integer, got {value!r}")
        for name in ("n_things", "n_stuff_bands"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                bad(name, f"must be a non-negative integer, got {value!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            bad("seed", "must be an unsigned 64-bit integer")
        if self.n_stuff_bands > self.height:
            bad("n_stuff_bands", "more bands than rows")
        if self.n_stuff_bands > len(self.categories.stuff_ids):
            bad("n_stuff_bands", "more bands than stuff categories")
        if self.n_things and not self.categories.thing_ids:
            bad("n_things", "category table has no thing categories")
        for name, count in (
            ("velocities", self.n_things),
            ("thing_categories", self.n_things),
            ("shapes", self.n_things),
            ("starts", self.n_things),
            ("sizes", self.n_things),
            ("stuff_categories", self.n_stuff_bands),
        ):
            value = getattr(self, name)
            if value is not None and len(value) != count:
                bad(name, f"needs {count} entries, got {len(value)}")
        for c in self.thing_categories or ():
            if c not in self.categories.thing_ids:
                bad("thing_categories", f"{c} is not a thing category")
        for c in self.stuff_categories or ():
            if c not in self.categories.stuff_ids:
                bad("stuff_categories", f"{c} is not a stuff category")
        for s in self.shapes or ():
            if s not in ("rect", "ellipse"):
                bad("shapes", f"unknown shape {s!r}")
        for size in self.sizes or ():
            if len(size) != 2 or min(size) <= 0:
                bad("sizes", f"need positive (h, w) pairs, got {size!r}")
        if self.n_queries is not None and (not isinstance(self.n_queries, int) or self.n_queries < 0):
            bad("n_queries", "must be a non-negative integer")

    @property
    def dims(self) -> Dims:
        return Dims(self.height, self.width)

    @property
    def name(self) -> str:
        return self.video_id or f"synth_{self.seed}"

    @classmethod
    def from_json(cls, data: dict) -> "SceneSpec":
        if not isinstance(data, dict):
            raise SpecInvalid("scene spec must be a JSON object")
        known = {f.name for f in fields(cls)} - {"categories"}
        kwargs = {k: v for k, v in data.items() if k in known}
        if "categories" in data:
            try:
                kwargs["categories"] = CategoryTable.from_json(data["categories"])
            except (TypeError, ValueError, IndexError) as exc:
                raise SpecInvalid(f"field 'categories': {exc}") from None
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise SpecInvalid(str(exc)) from None

    @classmethod
    def load(cls, path) -> "SceneSpec":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SpecInvalid(f"malformed JSON: {exc}") from None
        return cls.from_json(data)

    def to_json(self) -> dict:
        d = asdict(self)
        d["categories"] = self.categories.to_json()
        return d


@dataclass
class _Thing:
    shape: str
    size: tuple[float, float]  # (h, w)
    start: tuple[float, float]  # (cy, cx)
    velocity: tuple[float, float]  # (dx, dy)
    category: int


def _plan_things(spec: SceneSpec) -> list[_Thing]:
    n = spec.n_things
    h, w = spec.height, spec.width
    u = uniform(spec.seed, ("things",), 8 * max(n, 1)).reshape(-1, 8)
    thing_ids = spec.categories.thing_ids
    out = []
    for i in range(n):
        r = u[i]
        shape = spec.shapes[i] if spec.shapes else ("rect" if r[0] < 0.5 else "ellipse")
        if spec.sizes:
            size = tuple(float(x) for x in spec.sizes[i])
        else:
            size = (max(2.0, h * (0.15 + 0.25 * r[1])), max(2.0, w * (0.15 + 0.25 * r[2])))
        if spec.starts:
            start = tuple(float(x) for x in spec.starts[i])
        else:
            start = (r[3] * (h - 1), r[4] * (w - 1))
        if spec.velocities:
            dx, dy = spec.velocities[i]
        else:
            dx, dy = (r[5] - 0.5) * 6.0, (r[6] - 0.5) * 3.0
        if spec.thing_categories:
            cat = spec.thing_categories[i]
        else:
            cat = thing_ids[min(int(r[7] * len(thing_ids)), len(thing_ids) - 1)]
        out.append(_Thing(shape, size, start, (float(dx), float(dy)), int(cat)))
    return out


def _draw(thing: _Thing, t: int, dims: Dims) -> np.ndarray:
    cy = float(np.clip(thing.start[0] + thing.velocity[1] * t, 0, dims.height - 1))
    cx = float(np.clip(thing.start[1] + thing.velocity[0] * t, 0, dims.width - 1))
    # pixel centers sit at +0.5
    yy = np.arange(dims.height)[:, None] + 0.5 - (cy + 0.5)
    xx = np.arange(dims.width)[None, :] + 0.5 - (cx + 0.5)
    hh, hw = thing.size[0] / 2, thing.size[1] / 2
    if thing.shape == "rect":
        # half-open extent: a size-h box covers exactly h pixel centers when h is whole
        mask = (yy >= -hh) & (yy < hh) & (xx >= -hw) & (xx < hw)
    else:
        mask = (yy / hh) ** 2 + (xx / hw) ** 2 <= 1.0
    if not mask.any():
        mask[int(round(cy)), int(round(cx))] = True
    return mask


def generate(spec: SceneSpec) -> tuple[GroundTruthVideo, TrackSet]:
    """Ground truth plus the ideal prediction (one saturated track per segment).

    Things are painted in index order over horizontal stuff bands, so later
    things occlude earlier ones. Segments (and tracks) are ordered topmost
    thing first, then stuff bands top to bottom.
    """
    spec.validate()
    dims, T = spec.dims, spec.length
    label = np.full((T, *dims.shape), -1, dtype=np.int64)

    # (category, is_thing) per painted layer; the layer index is the label value
    layers: list[tuple[int, bool]] = []
    if spec.n_stuff_bands:
        if spec.n_stuff_bands > 1:
            cuts = np.sort(1 + permutation(spec.height - 1, spec.seed, "cuts")[: spec.n_stuff_bands - 1])
        else:
            cuts = np.array([], dtype=np.int64)
        edges = [0, *cuts.tolist(), spec.height]
        stuff = spec.stuff_categories or [
            spec.categories.stuff_ids[j] for j in permutation(len(spec.categories.stuff_ids), spec.seed, "stuff")[: spec.n_stuff_bands]
        ]
        for b in range(spec.n_stuff_bands):
            label[:, edges[b] : edges[b + 1], :] = len(layers)
            layers.append((int(stuff[b]), False))
    things = _plan_things(spec)
    for thing in things:
        index = len(layers)
        for t in range(T):
            label[t][_draw(thing, t, dims)] = index
        layers.append((thing.category, True))

    n_stuff = spec.n_stuff_bands
    thing_layers = [i for i in range(n_stuff, len(layers))][::-1]
    stuff_layers = list(range(n_stuff))

    ordered = []
    for i in thing_layers + stuff_layers:
        if (label == i).any():
            ordered.append(i)

    # stuff layers with a shared category become one segment
    segment_of_layer: dict[int, int] = {}
    rows: list[tuple[int, int, bool]] = []
    key_to_row: dict[tuple[int, int], int] = {}
    next_instance = 1
    for i in ordered:
        cat, thing = layers[i]
        if thing:
            key = (cat, next_instance)
            next_instance += 1
        else:
            key = (cat, 0)
        if key not in key_to_row:
            key_to_row[key] = len(rows)
            rows.append((segment_id(*key), cat, thing))
        segment_of_layer[i] = key_to_row[key]

    index_map = np.full(label.shape, -1, dtype=np.int64)
    for i, row in segment_of_layer.items():
        index_map[label == i] = row
    gt = GroundTruthVideo.from_dense(index_map, rows, spec.name)

    n_cls = spec.categories.count
    tracks = []
    for i in ordered:
        cat, _ = layers[i]
        logits = np.where(label == i, MASK_LOGIT, -MASK_LOGIT).astype(np.float32)
        classes = np.zeros(n_cls + 1, dtype=np.float32)
        classes[cat] = CLASS_LOGIT
        tracks.append(QueryTrack(f"q{len(tracks)}", logits, classes))
    if spec.n_queries is not None:
        while len(tracks) < spec.n_queries:
            classes = np.zeros(n_cls + 1, dtype=np.float32)
            classes[n_cls] = CLASS_LOGIT
            logits = np.full((T, *dims.shape), -MASK_LOGIT, dtype=np.float32)
            tracks.append(QueryTrack(f"q{len(tracks)}", logits, classes))
    return gt, TrackSet(spec.name, dims, T, n_cls, tracks)


# -- corruption ---------------------------------------------------------------


@dataclass(frozen=True)
class CorruptionSpec:
    drop_track_prob: float = 0.0
    boundary_jitter_px: int = 0
    logit_noise_sigma: float = 0.0
    class_confusion_prob: float = 0.0
    id_swap_at_frame: Optional[int] = None
    swap_pair: tuple[int, int] = (0, 1)

    def __post_init__(self):
        for name in ("drop_track_prob", "class_confusion_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise SpecInvalid(f"field '{name}': must be in [0, 1], got {value}")
        if not isinstance(self.boundary_jitter_px, int) or self.boundary_jitter_px < 0:
            raise SpecInvalid(f"field 'boundary_jitter_px': must be a non-negative integer")
        if not self.logit_noise_sigma >= 0.0:
            raise SpecInvalid(f"field 'logit_noise_sigma': must be >= 0")
        if self.id_swap_at_frame is not None and self.id_swap_at_frame < 0:
            raise SpecInvalid("field 'id_swap_at_frame': must be >= 0")
        object.__setattr__(self, "swap_pair", tuple(self.swap_pair))

    @classmethod
    def from_json(cls, data: dict) -> "CorruptionSpec":
        if not isinstance(data, dict):
            raise SpecInvalid("corruption spec must be a JSON object")
        known = {f.name for f in fields(cls)}
        try:
            return cls(**{k: v for k, v in data.items() if k in known})
        except TypeError as exc:
            raise SpecInvalid(str(exc)) from None


_CROSS = ndimage.generate_binary_structure(2, 2)


def _jitter(logits: np.ndarray, radius: int) -> np.ndarray:
    """Grow (radius > 0) or shrink (radius < 0) the positive support by sign flips."""
    support = logits > 0
    out = logits.copy()
    if radius > 0:
        ring = ndimage.binary_dilation(support, _CROSS, iterations=radius) & ~support
        out[ring] = np.abs(out[ring])
    elif radius < 0 and support.any():
        kept = ndimage.binary_erosion(support, _CROSS, iterations=-radius, border_value=1)
        ring = support & ~kept
        out[ring] = -np.abs(out[ring])
    return out


def corrupt(tracks: TrackSet, spec: CorruptionSpec, seed: int) -> TrackSet:
    n = len(tracks)
    n_cls = tracks.num_categories
    logits = [t.mask_logits.copy() for t in tracks]
    classes = [t.class_logits.copy() for t in tracks]

    if spec.id_swap_at_frame is not None and n >= 2:
        a, b = spec.swap_pair
        f = spec.id_swap_at_frame
        logits[a][f:], logits[b][f:] = logits[b][f:].copy(), logits[a][f:].copy()

    keep = uniform(seed, ("drop",), n) >= spec.drop_track_prob if n else np.zeros(0, bool)
    confuse = uniform(seed, ("confuse",), n) < spec.class_confusion_prob if n else np.zeros(0, bool)
    out = []
    for k, t in enumerate(tracks):
        if not keep[k]:
            continue
        grid, cls = logits[k], classes[k]
        if confuse[k] and n_cls > 1:
            current = int(cls[:n_cls].argmax())
            pick = int(integers(seed, ("confuse-target", k), 0, n_cls - 2, 1)[0])
            target = pick if pick < current else pick + 1
            cls[current], cls[target] = cls[target], cls[current]
        if spec.boundary_jitter_px:
            j = spec.boundary_jitter_px
            radii = integers(seed, ("jitter", k), -j, j, tracks.length)
            grid = np.stack([_jitter(grid[f], int(radii[f])) for f in range(tracks.length)])
        if spec.logit_noise_sigma:
            noise = normal(seed, ("noise", k), grid.size).reshape(grid.shape)
            grid = (grid + spec.logit_noise_sigma * noise).astype(np.float32)
        out.append(QueryTrack(t.track_id, grid, cls, t.source_tag))
    return tracks.with_tracks(out)
