"""Logit grids, run-length-encoded masks, IoU and geometric transforms.

Logit grids are plain ``float32`` numpy arrays shaped ``(H, W)`` (or
``(T, H, W)`` for a whole track). Hard masks travel as :class:`BinaryMask`
(RLE, row-major, first run counts zeros) and are decoded to ``bool`` arrays
for arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DimsMismatch, LengthMismatch, RunSumMismatch


@dataclass(frozen=True)
class Dims:
    height: int
    width: int

    def __post_init__(self):
        if int(self.height) < 1 or int(self.width) < 1:
            raise ValueError(f"dims must be positive, got {self.height}x{self.width}")
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "width", int(self.width))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def size(self) -> int:
        return self.height * self.width

    @classmethod
    def of(cls, array: np.ndarray) -> "Dims":
        return cls(array.shape[-2], array.shape[-1])

    @classmethod
    def short_side(cls, dims: "Dims", short: int) -> "Dims":
        """Rescale ``dims`` so the short side equals ``short`` (720p / 800p)."""
        scale = short / min(dims.height, dims.width)
        return cls(max(1, round(dims.height * scale)), max(1, round(dims.width * scale)))


@dataclass(frozen=True)
class BinaryMask:
    dims: Dims
    runs: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "runs", tuple(int(r) for r in self.runs))
        if any(r < 0 for r in self.runs):
            raise ValueError("run lengths must be non-negative")

    @property
    def area(self) -> int:
        return sum(self.runs[1::2])

    def decode(self) -> np.ndarray:
        return rle_decode(self)


@dataclass(frozen=True)
class MaskTube:
    dims: Dims
    frames: tuple[BinaryMask, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        for m in self.frames:
            if m.dims != self.dims:
                raise DimsMismatch(f"tube frame dims {m.dims} != {self.dims}")

    def __len__(self):
        return len(self.frames)

    @classmethod
    def from_dense(cls, tube: np.ndarray) -> "MaskTube":
        tube = np.asarray(tube, dtype=bool)
        return cls(Dims.of(tube), tuple(rle_encode(f) for f in tube))

    def to_dense(self) -> np.ndarray:
        if not self.frames:
            return np.zeros((0, *self.dims.shape), dtype=bool)
        return np.stack([rle_decode(m) for m in self.frames])


MaskLike = Union[BinaryMask, np.ndarray]
TubeLike = Union[MaskTube, np.ndarray]


def rle_encode(bits: np.ndarray) -> BinaryMask:
    bits = np.asarray(bits)
    if bits.ndim != 2:
        raise ValueError(f"expected a 2-D grid, got shape {bits.shape}")
    flat = bits.astype(bool).ravel()
    # Indices where the value changes, bracketed by the ends; first run is zeros.
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs.insert(0, 0)
    return BinaryMask(Dims.of(bits), tuple(runs))


def rle_decode(mask: BinaryMask) -> np.ndarray:
    runs = np.asarray(mask.runs, dtype=np.int64)
    total = int(runs.sum()) if runs.size else 0
    if total != mask.dims.size:
        raise RunSumMismatch(f"runs sum to {total}, expected {mask.dims.size}")
    values = np.arange(runs.size) % 2 == 1
    return np.repeat(values, runs).reshape(mask.dims.shape)


def threshold(grid: np.ndarray) -> BinaryMask:
    """Hard mask of a logit grid; a logit of exactly 0 is background."""
    return rle_encode(np.asarray(grid) > 0)


def _dense(m: MaskLike) -> np.ndarray:
    if isinstance(m, BinaryMask):
        return rle_decode(m)
    return np.asarray(m, dtype=bool)


def _dense_tube(t: TubeLike) -> np.ndarray:
    if isinstance(t, MaskTube):
        return t.to_dense()
    return np.asarray(t, dtype=bool)


def iou_2d(a: MaskLike, b: MaskLike) -> float:
    a, b = _dense(a), _dense(b)
    if a.shape != b.shape:
        raise DimsMismatch(f"{a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def iou_tube(a: TubeLike, b: TubeLike) -> float:
    a, b = _dense_tube(a), _dense_tube(b)
    if a.shape[1:] != b.shape[1:]:
        raise DimsMismatch(f"{a.shape[1:]} vs {b.shape[1:]}")
    if a.shape[0] != b.shape[0]:
        raise LengthMismatch(f"{a.shape[0]} frames vs {b.shape[0]}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix between two stacks of masks, ``(N, ...)`` x ``(M, ...)``.

    Every trailing axis is flattened, so this serves both frame masks and
    whole tubes. Empty-vs-empty entries are 0.
    """
    a = np.asarray(a, dtype=bool).reshape(len(a), -1)
    b = np.asarray(b, dtype=bool).reshape(len(b), -1)
    if a.shape[1] != b.shape[1]:
        raise DimsMismatch(f"mask sizes {a.shape[1]} vs {b.shape[1]}")
    # float32 matmul is exact for counts below 2**24
    dtype = np.float32 if a.shape[1] < 2**24 else np.float64
    inter = a.astype(dtype) @ b.astype(dtype).T
    area_a = a.sum(axis=1)[:, None]
    area_b = b.sum(axis=1)[None, :]
    union = area_a + area_b - inter
    out = np.zeros(inter.shape, dtype=np.float64)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def hflip(grid: np.ndarray) -> np.ndarray:
    """Mirror the last axis. Works on ``(H, W)`` grids and ``(T, H, W)`` stacks."""
    return np.ascontiguousarray(np.asarray(grid)[..., ::-1])


def _source_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(grid: np.ndarray, target: Dims) -> np.ndarray:
    """Half-pixel-center bilinear resize of the last two axes.

    Interpolation is written as ``a + (b - a) * w`` so constant regions come
    back bit-exact at any scale.
    """
    grid = np.asarray(grid)
    h, w = grid.shape[-2:]
    if (h, w) == target.shape:
        return grid.copy()
    y0, y1, wy = _source_coords(h, target.height)
    x0, x1, wx = _source_coords(w, target.width)
    g = grid.astype(np.float64)
    left = g[..., :, x0]
    cols = left + (g[..., :, x1] - left) * wx
    top = cols[..., y0, :]
    out = top + (cols[..., y1, :] - top) * wy[:, None]
    return out.astype(grid.dtype, copy=False)


# -- wire forms ---------------------------------------------------------------

def runs_to_bytes(mask: BinaryMask) -> bytes:
    return np.asarray(mask.runs, dtype="<u4").tobytes()


def runs_from_bytes(data: bytes, dims: Dims) -> BinaryMask:
    return BinaryMask(dims, tuple(np.frombuffer(data, dtype="<u4").tolist()))


def grid_to_bytes(grid: np.ndarray) -> bytes:
    return np.ascontiguousarray(grid, dtype="<f4").tobytes()


def grid_from_bytes(data: bytes, shape: Sequence[int]) -> np.ndarray:
    return np.frombuffer(data, dtype="<f4").reshape(tuple(shape)).astype(np.float32)
