import numpy as np
import pytest

from attnedit.attention import build_toy_denoiser
from attnedit.core import WordTokenizer, align_edit_words, build_schedule


@pytest.fixture
def tok():
    return WordTokenizer()


@pytest.fixture
def fox_duck(tok):
    src = tok.encode("a white fox on the grass")
    edit = tok.encode("a yellow duck on the water")
    spec = align_edit_words(src, edit, [("white", "yellow"), ("fox", "duck"), ("grass", "water")])
    return src, edit, spec


@pytest.fixture(scope="session")
def toy():
    return build_toy_denoiser(seed=0, resolutions=(8, 4), heads=2)


def random_frames(k, size=16, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, (k, size, size, 3), dtype=np.uint8)


def blob_frames(k, size=16):
    """Frames with a bright square drifting to the right over a dim gradient."""
    yy, xx = np.mgrid[0:size, 0:size]
    out = np.empty((k, size, size, 3), dtype=np.uint8)
    for i in range(k):
        img = np.stack([xx * 4, yy * 4, np.full_like(xx, 40)], axis=-1).astype(np.float64)
        x0 = 2 + (i % (size - 8))
        img[4:10, x0:x0 + 6] = (230, 200, 60)
        out[i] = img.clip(0, 255)
    return out


@pytest.fixture
def schedule():
    return build_schedule(30)
