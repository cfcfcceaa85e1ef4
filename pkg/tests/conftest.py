import numpy as np
import pytest

from scalpkit import pseudogen, raster
from scalpkit._util import substream


def random_blob_mask(rng: np.random.Generator, h: int = 64, w: int = 64, n_shapes: int = 6) -> np.ndarray:
    """Union of random discs and rectangles; may be empty."""
    mask = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(n_shapes):
        if rng.random() < 0.5:
            cy, cx = rng.integers(0, h), rng.integers(0, w)
            r = rng.integers(2, 8)
            mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        else:
            y0, x0 = rng.integers(0, h - 1), rng.integers(0, w - 1)
            y1 = rng.integers(y0 + 1, min(y0 + 12, h) + 1)
            x1 = rng.integers(x0 + 1, min(x0 + 12, w) + 1)
            mask[y0:y1, x0:x1] = True
    return mask


def flat_patches(size: int = 96) -> list[tuple[str, np.ndarray]]:
    """Hairless scalp-toned patches used as synthesis canvases."""
    tones = [(186, 144, 120), (168, 126, 104), (201, 158, 134)]
    return [
        (f"patch{i}", np.full((size, size, 3), tone, dtype=np.uint8))
        for i, tone in enumerate(tones)
    ]


def corrupt_mask(clean: np.ndarray, seed: int, specks: int = 20) -> np.ndarray:
    """Coarse-mask stand-in: dilation plus dandruff-sized specks."""
    out = raster.dilate(clean, raster.CROSS)
    rng = substream(seed, "corrupt")
    h, w = out.shape
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(specks):
        cy, cx = rng.integers(0, h), rng.integers(0, w)
        r = int(rng.integers(1, 4))
        out |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    return out


@pytest.fixture(scope="session")
def regression_pairs():
    """50 synthetic pairs shared by the end-to-end tests."""
    cfg = pseudogen.DatasetConfig(count=50, noise_circles=(0, 6))
    return pseudogen.gen_dataset(flat_patches(), cfg, seed=20240811)
