import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from panens.mask_core import Dims
from panens.tracker import QueryTrack, TrackSet

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@st.composite
def bit_grids(draw, max_side=12):
    h = draw(st.integers(1, max_side))
    w = draw(st.integers(1, max_side))
    bits = draw(st.lists(st.booleans(), min_size=h * w, max_size=h * w))
    return np.array(bits, dtype=bool).reshape(h, w)


@st.composite
def logit_grids(draw, max_side=10):
    h = draw(st.integers(1, max_side))
    w = draw(st.integers(1, max_side))
    vals = draw(
        st.lists(
            st.floats(-8, 8, allow_nan=False, width=32),
            min_size=h * w,
            max_size=h * w,
        )
    )
    return np.array(vals, dtype=np.float32).reshape(h, w)


def random_trackset(rng: np.random.Generator, n_tracks=None, dims=Dims(12, 16), length=3, n_cls=6, nonempty=True):
    """Blob-shaped tracks with noisy logits and random class vectors."""
    n_tracks = int(rng.integers(1, 6)) if n_tracks is None else n_tracks
    yy, xx = np.mgrid[: dims.height, : dims.width]
    tracks = []
    for k in range(n_tracks):
        frames = []
        cy, cx = rng.uniform(0, dims.height), rng.uniform(0, dims.width)
        r = rng.uniform(2, 6)
        for t in range(length):
            d = np.hypot(yy - cy - t, xx - cx + t) - r
            frames.append(-d + rng.normal(0, 0.7, d.shape))
        logits = np.stack(frames).astype(np.float32)
        if nonempty and not (logits > 0).any():
            logits[0, int(cy) % dims.height, int(cx) % dims.width] = 1.0
        classes = rng.normal(0, 1, n_cls + 1).astype(np.float32)
        classes[rng.integers(0, n_cls)] += rng.uniform(2, 6)
        tracks.append(QueryTrack(f"t{k}", logits, classes))
    return TrackSet("random", dims, length, n_cls, tracks)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
