"""Synthetic (image, mask) pair generation: curve strokes for hair, circles for dandruff.

Strokes follow y = a*x + b or y = a*(x - x0)**p + y0 with x = column, y = row.
The centerline is sampled once per column and consecutive samples are joined
with an integer line rasterizer, which keeps steep curves 8-connected; the
stroke footprint is the centerline dilated by a disc of radius thickness//2.
Noise circles are painted on the image only and never enter the mask.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import raster
from ._util import substream

# Canonical stroke colors; jittered per pair at dataset generation time.
HAIR_COLORS = {
    "black": (20, 18, 16),
    "brown": (101, 67, 33),
    "blue": (46, 64, 160),
    "white": (238, 238, 240),
}
NOISE_WHITE = (245, 243, 238)


class CurveOutOfBounds(ValueError):
    """The curve's centerline never intersects the canvas."""


@dataclass(frozen=True)
class CurveSpec:
    """One hair stroke: family 'linear' (a, b) or 'power' (a, p, x0, y0)."""

    family: str
    coefficients: tuple[float, ...]
    thickness: int = 1
    color: tuple[int, int, int] = HAIR_COLORS["black"]

    def __post_init__(self):
        if self.family not in ("linear", "power"):
            raise ValueError(f"unknown curve family {self.family!r}")
        n = 2 if self.family == "linear" else 4
        if len(self.coefficients) != n:
            raise ValueError(f"{self.family} curve needs {n} coefficients")
        if self.family == "power" and self.coefficients[1] <= 0:
            raise ValueError("power exponent must be > 0")
        if self.thickness < 1:
            raise ValueError("thickness must be >= 1")

    def y_at(self, x: float) -> float:
        if self.family == "linear":
            a, b = self.coefficients
            return a * x + b
        a, p, x0, y0 = self.coefficients
        base = x - x0
        if base < 0 and not float(p).is_integer():
            return math.nan  # fractional power of a negative base
        try:
            return a * base**p + y0
        except OverflowError:
            return math.inf


@dataclass(frozen=True)
class NoiseSpec:
    """Dandruff-style circles: count, radius range, near-white color."""

    num_circles: int = 0
    radius_range: tuple[int, int] = (1, 3)
    color: tuple[int, int, int] = NOISE_WHITE

    def __post_init__(self):
        if self.num_circles < 0:
            raise ValueError("num_circles must be >= 0")
        r_min, r_max = self.radius_range
        if r_min < 1 or r_min > r_max:
            raise ValueError("require 1 <= r_min <= r_max")


@dataclass(frozen=True)
class PseudoPair:
    image: np.ndarray
    mask: raster.Mask
    seed: int
    patch_id: str
    curves: tuple[CurveSpec, ...]
    noise: NoiseSpec


def _line_pixels(y0: int, x0: int, y1: int, x1: int) -> Iterator[tuple[int, int]]:
    """Integer line stepping (Bresenham); yields an 8-connected pixel chain."""
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        yield y0, x0
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def _clip_segment(x0, y0, x1, y1, y_lo, y_hi):
    """Clip the float segment to y in [y_lo, y_hi]; None when fully outside."""
    if y0 > y1:
        x0, y0, x1, y1 = x1, y1, x0, y0
    if y1 < y_lo or y0 > y_hi:
        return None
    if y0 < y_lo:
        t = (y_lo - y0) / (y1 - y0)
        x0, y0 = x0 + t * (x1 - x0), y_lo
    if y1 > y_hi:
        t = (y_hi - y0) / (y1 - y0)
        x1, y1 = x0 + t * (x1 - x0), y_hi
    return x0, y0, x1, y1


def render_curve(shape: tuple[int, int], spec: CurveSpec) -> raster.Mask:
    """Rasterize the stroke footprint of a curve on an H x W canvas."""
    h, w = shape
    if h < 1 or w < 1:
        raise ValueError("canvas must be non-empty")
    radius = spec.thickness // 2
    margin = radius + 4
    samples = [(x, spec.y_at(float(x))) for x in range(w)]
    samples = [(x, y) for x, y in samples if math.isfinite(y)]

    expanded = np.zeros((h + 2 * margin, w + 2 * margin), dtype=bool)
    hit_canvas = False
    for (xa, ya), (xb, yb) in zip(samples, samples[1:] or samples):
        seg = _clip_segment(float(xa), ya, float(xb), yb, -margin, h - 1 + margin)
        if seg is None:
            continue
        cx0, cy0, cx1, cy1 = (int(round(v)) for v in seg)
        for py, px in _line_pixels(cy0, cx0, cy1, cx1):
            expanded[py + margin, px + margin] = True
            if 0 <= py < h and 0 <= px < w:
                hit_canvas = True
    if not hit_canvas:
        raise CurveOutOfBounds(f"curve {spec.family}{spec.coefficients} misses the {h}x{w} canvas")
    if radius > 0:
        expanded = raster.dilate(expanded, raster.disc(radius))
    return expanded[margin : margin + h, margin : margin + w]


def _paint_disc(image: np.ndarray, cy: int, cx: int, radius: int, color) -> None:
    h, w = image.shape[:2]
    y0, y1 = max(cy - radius, 0), min(cy + radius + 1, h)
    x0, x1 = max(cx - radius, 0), min(cx + radius + 1, w)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    hit = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius
    image[y0:y1, x0:x1][hit] = color


def synth_pair(
    patch: np.ndarray,
    curves: Sequence[CurveSpec],
    noise: NoiseSpec,
    seed: int,
    patch_id: str = "",
) -> PseudoPair:
    """Overpaint strokes then noise circles; the mask records strokes only."""
    if patch.ndim != 3 or patch.shape[2] != 3:
        raise ValueError("patch must be an RGB (H,W,3) array")
    h, w = patch.shape[:2]
    image = np.array(patch, dtype=np.uint8, copy=True)
    mask = np.zeros((h, w), dtype=bool)
    for spec in curves:
        footprint = render_curve((h, w), spec)
        image[footprint] = np.array(spec.color, dtype=np.uint8)
        mask |= footprint
    rng = substream(seed, "noise-circles")
    r_min, r_max = noise.radius_range
    for _ in range(noise.num_circles):
        cy = int(rng.integers(0, h))
        cx = int(rng.integers(0, w))
        radius = int(rng.integers(r_min, r_max + 1))
        _paint_disc(image, cy, cx, radius, np.array(noise.color, dtype=np.uint8))
    return PseudoPair(image, mask, seed, patch_id, tuple(curves), noise)


@dataclass(frozen=True)
class DatasetConfig:
    count: int = 3000
    curves_per_image: tuple[int, int] = (3, 8)
    thickness: tuple[int, int] = (1, 5)
    power_fraction: float = 0.5
    power_exponent: tuple[float, float] = (0.6, 3.0)
    noise_circles: tuple[int, int] = (0, 12)
    noise_radius: tuple[int, int] = (1, 4)
    color_jitter: int = 16

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")


def _jitter_color(rng: np.random.Generator, color, amount: int) -> tuple[int, int, int]:
    jit = rng.integers(-amount, amount + 1, size=3)
    return tuple(int(v) for v in np.clip(np.array(color) + jit, 0, 255))


def _draw_curve_spec(rng: np.random.Generator, h: int, w: int, cfg: DatasetConfig) -> CurveSpec:
    thickness = int(rng.integers(cfg.thickness[0], cfg.thickness[1] + 1))
    name = ("black", "brown", "blue", "white")[rng.integers(0, 4)]
    color = _jitter_color(rng, HAIR_COLORS[name], cfg.color_jitter)
    if rng.random() < cfg.power_fraction:
        p = float(rng.uniform(*cfg.power_exponent))
        x0 = float(rng.uniform(0, w - 1))
        y0 = float(rng.uniform(0, h - 1))
        # scale so the rise across the remaining width spans a visible arc
        span = max(w - x0, 2.0)
        rise = float(rng.uniform(0.2 * h, 1.5 * h)) * (1 if rng.random() < 0.5 else -1)
        a = rise / span**p
        return CurveSpec("power", (a, p, x0, y0), thickness, color)
    xa, xb = sorted(rng.choice(w, size=2, replace=False))
    ya, yb = (float(rng.uniform(0, h - 1)) for _ in range(2))
    a = (yb - ya) / float(xb - xa)
    b = ya - a * float(xa)
    return CurveSpec("linear", (a, b), thickness, color)


def iter_pairs(
    patches: Sequence[tuple[str, np.ndarray]],
    config: DatasetConfig,
    seed: int,
) -> Iterator[PseudoPair]:
    """Generate config.count pairs, patches taken round-robin, one RNG stream per index."""
    if not patches:
        raise ValueError("at least one patch is required")
    for index in range(config.count):
        patch_id, patch = patches[index % len(patches)]
        rng = substream(seed, "pair", index)
        h, w = patch.shape[:2]
        n_curves = int(rng.integers(config.curves_per_image[0], config.curves_per_image[1] + 1))
        curves = []
        while len(curves) < n_curves:
            for _ in range(32):
                spec = _draw_curve_spec(rng, h, w, config)
                try:
                    render_curve((h, w), spec)
                except CurveOutOfBounds:
                    continue
                curves.append(spec)
                break
            else:
                raise RuntimeError("could not draw an in-canvas curve after 32 attempts")
        noise = NoiseSpec(
            num_circles=int(rng.integers(config.noise_circles[0], config.noise_circles[1] + 1)),
            radius_range=config.noise_radius,
            color=_jitter_color(rng, NOISE_WHITE, 8),
        )
        pair_seed = int(substream(seed, "pair-seed", index).integers(0, 2**63 - 1))
        yield synth_pair(patch, curves, noise, pair_seed, patch_id)


def gen_dataset(
    patches: Sequence[tuple[str, np.ndarray]],
    config: DatasetConfig,
    seed: int,
) -> list[PseudoPair]:
    """Materialized iter_pairs; intended for modest counts (pairs are held in memory)."""
    return list(iter_pairs(patches, config, seed))


def curve_to_manifest(spec: CurveSpec) -> dict:
    return {
        "family": spec.family,
        "coefficients": [float(c) for c in spec.coefficients],
        "thickness": spec.thickness,
        "color": list(spec.color),
    }


def noise_to_manifest(spec: NoiseSpec) -> dict:
    return {
        "num_circles": spec.num_circles,
        "radius_range": list(spec.radius_range),
        "color": list(spec.color),
    }


def pair_to_manifest(index: int, pair: PseudoPair) -> dict:
    return {
        "index": index,
        "patch": pair.patch_id,
        "seed": pair.seed,
        "curves": [curve_to_manifest(c) for c in pair.curves],
        "noise": noise_to_manifest(pair.noise),
    }
