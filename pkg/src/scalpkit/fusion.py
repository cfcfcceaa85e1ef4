"""Mask ensembling (AND + small-component cleanup), pair metrics, hair statistics."""
from __future__ import annotations

from dataclasses import dataclass

from . import prompter, raster


class DimensionMismatch(ValueError):
    pass


def _check_dims(a: raster.Mask, b: raster.Mask) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")


def combine(
    coarse: raster.Mask,
    prompted: raster.Mask,
    min_area: int = 0,
    connectivity: int = 8,
) -> raster.Mask:
    """Logical AND of the two masks followed by small-component removal."""
    coarse = raster.as_mask(coarse)
    prompted = raster.as_mask(prompted)
    _check_dims(coarse, prompted)
    return raster.remove_small_components(coarse & prompted, min_area, connectivity)


@dataclass(frozen=True)
class MaskPairEval:
    """Hair-class pixel metrics; pixel_f1_macro additionally averages in the background class."""

    pixel_f1: float
    jaccard: float
    dice: float
    pixel_f1_macro: float
    tp: int
    fp: int
    fn: int
    tn: int


def _safe_div(num: float, den: float, empty_value: float = 1.0) -> float:
    # Convention: a metric over an empty denominator (nothing predicted and
    # nothing to find) counts as a perfect score.
    return num / den if den else empty_value


def evaluate(pred: raster.Mask, gt: raster.Mask) -> MaskPairEval:
    pred = raster.as_mask(pred)
    gt = raster.as_mask(gt)
    _check_dims(pred, gt)
    tp = int((pred & gt).sum())
    fp = int((pred & ~gt).sum())
    fn = int((~pred & gt).sum())
    tn = int((~pred & ~gt).sum())
    f1_hair = _safe_div(2 * tp, 2 * tp + fp + fn)
    f1_background = _safe_div(2 * tn, 2 * tn + fp + fn)
    return MaskPairEval(
        pixel_f1=f1_hair,
        jaccard=_safe_div(tp, tp + fp + fn),
        dice=f1_hair,
        pixel_f1_macro=(f1_hair + f1_background) / 2.0,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
    )


@dataclass(frozen=True)
class HairStats:
    strand_count: int
    mean_thickness: float
    total_hair_area: int
    skeleton_length: int


def hair_stats(mask: raster.Mask, connectivity: int = 8) -> HairStats:
    """Strand count and thickness estimated from the morphological skeleton."""
    mask = raster.as_mask(mask)
    area = int(mask.sum())
    if area == 0:
        return HairStats(0, 0.0, 0, 0)
    skeleton = prompter.skeletonize(mask).skeleton
    length = int(skeleton.sum())
    strands = raster.label_components(skeleton, connectivity).count
    return HairStats(strands, area / length if length else 0.0, area, length)
