"""Representative point prompts from a coarse hair mask.

Pipeline: morphological skeleton -> one n x n box per skeleton pixel -> greedy
NMS -> per-box mean of the hair pixels as positive prompts, plus negatives
sampled from the mask complement.

Coordinate convention (fixed deliberately, ambiguous upstream): the first
coordinate x indexes rows (i), the second y indexes columns (j). Wire formats
always name fields "row"/"col" and never rely on position.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import raster
from ._util import atomic_write_text, substream


class EmptyBox(ValueError):
    """Box contains no set pixel, so the mean point is undefined."""


class InsufficientBackground(ValueError):
    """Fewer background pixels than requested negative prompts."""


@dataclass(frozen=True)
class SkeletonRecord:
    """Skeleton plus the per-iteration difference layers that compose it."""

    skeleton: raster.Mask
    layers: tuple[raster.Mask, ...]
    iterations: int
    source: raster.Mask

    def reconstruct(self, se: raster.StructuringElement = raster.CROSS) -> raster.Mask:
        """Invert the decomposition: union of layer t dilated t times (exact)."""
        out = np.zeros_like(self.skeleton)
        for layer in reversed(self.layers):
            out = raster.dilate(out, se) | layer
        return out


def skeletonize(mask: raster.Mask, se: raster.StructuringElement = raster.CROSS) -> SkeletonRecord:
    """Morphological skeleton: per level, keep what opening removes, then erode.

    Terminates because erosion with zero padding strictly shrinks any
    non-empty mask (true for the cross element).
    """
    mask = raster.as_mask(mask)
    copy = mask.copy()
    skeleton = np.zeros_like(mask)
    layers: list[raster.Mask] = []
    while copy.any():
        eroded = raster.erode(copy, se)
        opened = raster.dilate(eroded, se)
        layer = copy & ~opened
        skeleton |= layer
        layers.append(layer)
        if eroded.sum() >= copy.sum():
            raise ValueError("structuring element does not strictly shrink the mask")
        copy = eroded
    return SkeletonRecord(skeleton, tuple(layers), len(layers), mask)


@dataclass(frozen=True)
class Box:
    """Half-open pixel box [x_min, x_max) x [y_min, y_max); x = row, y = col."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int
    score: float = 0.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("box must have positive extent")

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


def iou(a: Box, b: Box) -> float:
    ix = max(0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
    iy = max(0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union else 0.0


def _clamp_span(center: int, n: int, limit: int) -> tuple[int, int]:
    """[lo, lo+n) containing center, shifted inside [0, limit); shrinks only if n > limit."""
    lo = center - n // 2
    lo = min(max(lo, 0), max(limit - n, 0))
    return lo, min(lo + n, limit)


def boxes_from_skeleton(rec: SkeletonRecord, n: int) -> list[Box]:
    """One n x n box per skeleton pixel, scored by hair-pixel support in the source mask."""
    if n < 2:
        raise ValueError("box side must be >= 2")
    h, w = rec.skeleton.shape
    boxes = []
    for r, c in np.argwhere(rec.skeleton):
        x_min, x_max = _clamp_span(int(r), n, h)
        y_min, y_max = _clamp_span(int(c), n, w)
        score = int(rec.source[x_min:x_max, y_min:y_max].sum())
        boxes.append(Box(x_min, y_min, x_max, y_max, float(score)))
    return boxes


def nms(boxes: list[Box], iou_threshold: float) -> list[Box]:
    """Greedy descending-score suppression; survivors overlap at most iou_threshold.

    Ties are broken by row-major box origin so the result is independent of
    input order.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("iou_threshold must be in [0, 1]")
    ordered = sorted(boxes, key=lambda b: (-b.score, b.x_min, b.y_min, b.x_max, b.y_max))
    kept: list[Box] = []
    for box in ordered:
        if all(iou(box, k) <= iou_threshold for k in kept):
            kept.append(box)
    return kept


def mean_point(mask: raster.Mask, box: Box) -> tuple[float, float]:
    """Mean (row, col) of the set pixels inside the box extent."""
    mask = raster.as_mask(mask)
    window = mask[box.x_min : box.x_max, box.y_min : box.y_max]
    rows, cols = np.nonzero(window)
    if rows.size == 0:
        raise EmptyBox(f"no set pixel in box [{box.x_min},{box.x_max})x[{box.y_min},{box.y_max})")
    x_bar = (int(rows.sum()) + box.x_min * rows.size) / rows.size
    y_bar = (int(cols.sum()) + box.y_min * cols.size) / cols.size
    return x_bar, y_bar


@dataclass(frozen=True)
class PrompterConfig:
    n: int = 10
    iou_threshold: float = 0.3
    num_negatives: int = 10
    max_positives: int | None = None


@dataclass(frozen=True)
class PromptSet:
    """Positive prompts are float (row, col) means; negatives integer (row, col)."""

    positives: tuple[tuple[float, float], ...]
    negatives: tuple[tuple[int, int], ...]


def build_prompts(coarse: raster.Mask, config: PrompterConfig, seed: int) -> PromptSet:
    """Positives from NMS-surviving skeleton boxes; negatives sampled off-mask."""
    coarse = raster.as_mask(coarse)
    positives: list[tuple[float, float]] = []
    if coarse.any():
        rec = skeletonize(coarse)
        boxes = nms(boxes_from_skeleton(rec, config.n), config.iou_threshold)
        if config.max_positives is not None:
            boxes = boxes[: config.max_positives]
        for box in boxes:
            positives.append(mean_point(coarse, box))
    background = np.argwhere(~coarse)
    if len(background) < config.num_negatives:
        raise InsufficientBackground(
            f"requested {config.num_negatives} negatives, only {len(background)} background pixels"
        )
    rng = substream(seed, "negatives")
    picks = rng.choice(len(background), size=config.num_negatives, replace=False)
    negatives = tuple((int(background[i][0]), int(background[i][1])) for i in picks)
    return PromptSet(tuple(positives), negatives)


def prompts_to_json(prompts: PromptSet, n: int) -> str:
    doc = {
        "positives": [{"row": r, "col": c} for r, c in prompts.positives],
        "negatives": [{"row": r, "col": c} for r, c in prompts.negatives],
        "n": n,
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def prompts_from_json(text: str) -> PromptSet:
    doc = json.loads(text)
    positives = tuple((float(p["row"]), float(p["col"])) for p in doc.get("positives", []))
    negatives = tuple((int(p["row"]), int(p["col"])) for p in doc.get("negatives", []))
    return PromptSet(positives, negatives)


def write_prompts(path, prompts: PromptSet, n: int) -> None:
    atomic_write_text(path, prompts_to_json(prompts, n) + "\n")
