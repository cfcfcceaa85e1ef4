"""Binary-mask primitives: structuring elements, morphology, components, mask file I/O.

A mask is a 2-D bool ndarray, row-major, True = hair. All operations are pure
functions with zero padding at the borders, so repeated erosion of any finite
mask reaches the empty mask.
"""
from __future__ import annotations

from dataclasses import dataclass
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from ._util import atomic_write_bytes

Mask = np.ndarray


class MaskValueError(ValueError):
    """Mask data holds values outside the allowed set."""


@dataclass(frozen=True)
class StructuringElement:
    """Neighborhood as (dy, dx) offsets; must contain the origin."""

    offsets: tuple[tuple[int, int], ...]

    def __post_init__(self):
        offs = tuple(sorted({(int(dy), int(dx)) for dy, dx in self.offsets}))
        if (0, 0) not in offs:
            raise ValueError("structuring element must contain the origin")
        object.__setattr__(self, "offsets", offs)

    def reflected(self) -> "StructuringElement":
        return StructuringElement(tuple((-dy, -dx) for dy, dx in self.offsets))


CROSS = StructuringElement(((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)))


def disc(radius: int) -> StructuringElement:
    """Disc of the given integer radius (radius 0 = origin only)."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    offs = [
        (dy, dx)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
        if dy * dy + dx * dx <= radius * radius
    ]
    return StructuringElement(tuple(offs))


def as_mask(a) -> Mask:
    """Validate and normalize to a 2-D bool array; entries must be in {0,1}."""
    arr = np.asarray(a)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise MaskValueError(f"mask must be a non-empty 2-D grid, got shape {arr.shape}")
    if arr.dtype == bool:
        return arr
    if not np.isin(arr, (0, 1)).all():
        raise MaskValueError("mask entries must be 0 or 1")
    return arr.astype(bool)


def _translate(mask: Mask, dy: int, dx: int) -> Mask:
    """out[y, x] = mask[y + dy, x + dx], zero fill outside."""
    h, w = mask.shape
    out = np.zeros((h, w), dtype=bool)
    y0, y1 = max(-dy, 0), min(h - dy, h)
    x0, x1 = max(-dx, 0), min(w - dx, w)
    if y0 < y1 and x0 < x1:
        out[y0:y1, x0:x1] = mask[y0 + dy : y1 + dy, x0 + dx : x1 + dx]
    return out


def erode(mask: Mask, se: StructuringElement = CROSS) -> Mask:
    """Pixels whose whole se-neighborhood is set; borders erode away."""
    mask = as_mask(mask)
    out = np.ones_like(mask)
    for dy, dx in se.offsets:
        out &= _translate(mask, dy, dx)
    return out


def dilate(mask: Mask, se: StructuringElement = CROSS) -> Mask:
    """Pixels reached by placing se on any set pixel (clipped to the grid)."""
    mask = as_mask(mask)
    out = np.zeros_like(mask)
    for dy, dx in se.offsets:
        out |= _translate(mask, -dy, -dx)
    return out


@dataclass(frozen=True)
class ComponentLabeling:
    """labels: 0 = background, components numbered 1..count consecutively."""

    labels: np.ndarray
    component_areas: dict[int, int]

    @property
    def count(self) -> int:
        return len(self.component_areas)


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 4:
        return np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    if connectivity == 8:
        return np.ones((3, 3), dtype=bool)
    raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")


def label_components(mask: Mask, connectivity: int = 8) -> ComponentLabeling:
    mask = as_mask(mask)
    labels, count = ndimage.label(mask, structure=_structure(connectivity))
    areas = np.bincount(labels.ravel(), minlength=count + 1)
    return ComponentLabeling(labels, {k: int(areas[k]) for k in range(1, count + 1)})


def remove_small_components(mask: Mask, min_area: int, connectivity: int = 8) -> Mask:
    """Drop connected components with fewer than min_area pixels."""
    if min_area < 0:
        raise ValueError("min_area must be >= 0")
    mask = as_mask(mask)
    if min_area <= 1:
        return mask.copy()
    labeling = label_components(mask, connectivity)
    keep = np.zeros(labeling.count + 1, dtype=bool)
    for lab, area in labeling.component_areas.items():
        keep[lab] = area >= min_area
    return keep[labeling.labels]


def read_mask(path: str | Path, strict: bool = False) -> Mask:
    """Read a single-channel PNG/PGM mask; any nonzero pixel decodes to 1.

    strict=True rejects pixel values other than 0 and 255.
    """
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    if strict and not np.isin(arr, (0, 255)).all():
        bad = sorted(set(np.unique(arr)) - {0, 255})
        raise MaskValueError(f"strict mask decode: unexpected pixel values {bad[:8]} in {path}")
    return arr > 0


def write_mask(path: str | Path, mask: Mask) -> None:
    """Write a mask as 0/255 single-channel PNG or PGM (by file suffix)."""
    mask = as_mask(mask)
    suffix = Path(path).suffix.lower()
    fmt = "PPM" if suffix in (".pgm", ".ppm") else "PNG"
    buf = BytesIO()
    Image.fromarray(mask.astype(np.uint8) * 255, mode="L").save(buf, format=fmt)
    atomic_write_bytes(path, buf.getvalue())
