"""Internal helpers: seeded RNG substreams, atomic file writes, image codecs."""
from __future__ import annotations

import hashlib
import os
import tempfile
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image


def stream_key(name: str) -> int:
    """Stable 64-bit key for a named RNG substream (hash-salt independent)."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def substream(seed: int, *keys: int | str) -> np.random.Generator:
    """Generator for the substream identified by (seed, *keys).

    Streams with distinct key paths are statistically independent, and the
    derivation does not depend on the order substreams are created in, so
    per-item work can run in parallel and stay reproducible.
    """
    entropy = [int(seed)]
    for k in keys:
        entropy.append(stream_key(k) if isinstance(k, str) else int(k))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write a file via temp-then-rename so readers never see partial content."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_image(arr: np.ndarray, fmt: str = "PNG") -> bytes:
    """Encode a uint8 grayscale (H,W) or RGB (H,W,3) array."""
    mode = "L" if arr.ndim == 2 else "RGB"
    buf = BytesIO()
    Image.fromarray(arr.astype(np.uint8), mode=mode).save(buf, format=fmt)
    return buf.getvalue()


def read_rgb(path: str | Path) -> np.ndarray:
    """Load an image file as (H,W,3) uint8."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def write_rgb(path: str | Path, arr: np.ndarray) -> None:
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError(f"expected (H,W,3) uint8 array, got {arr.shape} {arr.dtype}")
    atomic_write_bytes(path, encode_image(arr))
