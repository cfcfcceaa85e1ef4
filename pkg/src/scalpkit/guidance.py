"""Masked diffusion-guidance arithmetic with pluggable loss-term providers.

Image tensors are float arrays, (C,H,W) or (H,W), valued in [-1, 1]. The
perceptual loss terms (style, content, semantic, range, and the perceptual
half of the mask term) are injected as providers returning (value, gradient);
this module does no automatic differentiation. PNG conversion maps pixel 0 to
-1.0 and 255 to +1.0.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace
from typing import Callable, Mapping

import numpy as np

from . import raster

Array = np.ndarray
LossTermProvider = Callable[[Array], tuple[float, Array]]
Denoiser = Callable[[Array, int], Array]

TERM_NAMES = ("style", "content", "mask", "sem", "rng")


class NonPositiveAlpha(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class MissingLossTerm(KeyError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative noise-retention factors alpha_bar[0..T] with alpha_bar[0] = 1."""

    alpha_bar: Array

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=float)
        if ab.ndim != 1 or ab.size < 1:
            raise ValueError("alpha_bar must be a non-empty 1-D sequence")
        if ab[0] != 1.0:
            raise ValueError("alpha_bar[0] must be 1")
        if (ab <= 0).any() or (ab > 1).any():
            raise ValueError("alpha_bar entries must lie in (0, 1]")
        if (np.diff(ab) > 0).any():
            raise ValueError("alpha_bar must be non-increasing")
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def T(self) -> int:
        return self.alpha_bar.size - 1

    @classmethod
    def linear_beta(cls, T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        betas = np.linspace(beta_start, beta_end, T)
        return cls(np.concatenate([[1.0], np.cumprod(1.0 - betas)]))

    @classmethod
    def cosine(cls, T: int = 1000, s: float = 0.008) -> "NoiseSchedule":
        t = np.arange(T + 1)
        f = np.cos((t / T + s) / (1 + s) * math.pi / 2) ** 2
        ratios = f[1:] / f[:-1]
        betas = np.clip(1.0 - ratios, 0.0, 0.999)
        return cls(np.concatenate([[1.0], np.cumprod(1.0 - betas)]))


@dataclass(frozen=True)
class GuidanceWeights:
    """Per-term weights; defaults follow the shipped configuration."""

    style: float = 2000.0
    content: float = 1.0
    mask: float = 1000.0
    sem: float = 100.0
    rng: float = 200.0
    # sub-weights of the injected style/content terms, housed here so a full
    # weight configuration round-trips through one document
    mse: float = 3000.0
    sim: float = 1000.0
    con: float = 200.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"weight {f.name} must be non-negative")

    def term_weight(self, name: str) -> float:
        return {n: getattr(self, n) for n in TERM_NAMES}[name]

    def to_json(self) -> str:
        return json.dumps({f.name: getattr(self, f.name) for f in fields(self)}, sort_keys=True, indent=2)

    @classmethod
    def from_mapping(cls, data: Mapping[str, float]) -> "GuidanceWeights":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown weight fields: {sorted(unknown)}")
        return replace(cls(), **{k: float(v) for k, v in data.items()})


def zero_provider(x: Array) -> tuple[float, Array]:
    """Stand-in for an out-of-scope perceptual term: contributes nothing."""
    return 0.0, np.zeros_like(x)


def zero_denoiser(x: Array, t: int) -> Array:
    return np.zeros_like(x)


def _check_image(x: Array) -> Array:
    x = np.asarray(x, dtype=float)
    if x.ndim not in (2, 3):
        raise ShapeMismatch(f"image tensor must be (C,H,W) or (H,W), got {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("image tensor must be finite")
    return x


def _mask_factor(mask: raster.Mask, like: Array) -> Array:
    mask = raster.as_mask(mask)
    if mask.shape != like.shape[-2:]:
        raise ShapeMismatch(f"mask {mask.shape} does not match image {like.shape}")
    m = mask.astype(like.dtype)
    return m if like.ndim == 2 else m[None, :, :]


def x0_hat(x_t: Array, eps: Array, alpha_bar_t: float) -> Array:
    """Clean-image estimate from a noisy sample and its predicted noise."""
    x_t = _check_image(x_t)
    eps = np.asarray(eps, dtype=float)
    if eps.shape != x_t.shape:
        raise ShapeMismatch(f"eps shape {eps.shape} does not match x_t {x_t.shape}")
    if not 0.0 < alpha_bar_t <= 1.0:
        raise NonPositiveAlpha(f"alpha_bar_t must be in (0, 1], got {alpha_bar_t}")
    root = math.sqrt(alpha_bar_t)
    return x_t / root - math.sqrt(1.0 - alpha_bar_t) * eps / root


def masked_l2(x_src: Array, x0: Array, mask: raster.Mask) -> float:
    """Euclidean norm of (x_src - x0) restricted to mask-set pixels."""
    x_src = _check_image(x_src)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != x_src.shape:
        raise ShapeMismatch(f"shapes differ: {x_src.shape} vs {x0.shape}")
    diff = (x_src - x0) * _mask_factor(mask, x_src)
    return float(np.sqrt((diff * diff).sum()))


def mask_term_provider(
    x_src: Array,
    mask: raster.Mask,
    perceptual: LossTermProvider | None = None,
) -> LossTermProvider:
    """Hair-preservation term: exact masked L2 with analytic gradient, plus an
    optional injected perceptual part (e.g. a patch-similarity metric)."""
    x_src = _check_image(x_src)
    m = _mask_factor(mask, x_src)

    def provider(x: Array) -> tuple[float, Array]:
        diff = (x - x_src) * m
        norm = float(np.sqrt((diff * diff).sum()))
        grad = diff / norm if norm > 0 else np.zeros_like(diff)
        value = norm
        if perceptual is not None:
            p_value, p_grad = perceptual(x)
            value += p_value
            grad = grad + p_grad
        return value, grad

    return provider


def total_loss(
    candidate: Array,
    providers: Mapping[str, LossTermProvider],
    weights: GuidanceWeights,
) -> tuple[float, Array]:
    """Weighted sum of the five loss terms and of their gradients."""
    candidate = _check_image(candidate)
    missing = [n for n in TERM_NAMES if n not in providers]
    if missing:
        raise MissingLossTerm(f"missing loss term providers: {missing}")
    value = 0.0
    grad = np.zeros_like(candidate)
    for name in TERM_NAMES:
        term_value, term_grad = providers[name](candidate)
        term_grad = np.asarray(term_grad, dtype=float)
        if term_grad.shape != candidate.shape:
            raise ShapeMismatch(f"gradient of {name!r} has shape {term_grad.shape}, want {candidate.shape}")
        w = weights.term_weight(name)
        value += w * term_value
        grad += w * term_grad
    return value, grad


ZERO_PROVIDERS: dict[str, LossTermProvider] = {name: zero_provider for name in TERM_NAMES}


def blend_step(
    x_t: Array,
    eps: Array,
    alpha_bar_t: float,
    providers: Mapping[str, LossTermProvider],
    weights: GuidanceWeights,
    mask: raster.Mask,
    *,
    alpha_bar_prev: float | None = None,
) -> Array:
    """One masked reverse update: mask pixels keep x_t bit-exactly, the rest
    take the guided clean estimate (optionally re-noised to the next level)."""
    x_t = _check_image(x_t)
    x0 = x0_hat(x_t, eps, alpha_bar_t)
    _, grad = total_loss(x0, providers, weights)
    guided = x0 - grad
    if alpha_bar_prev is not None:
        if not 0.0 < alpha_bar_prev <= 1.0:
            raise NonPositiveAlpha(f"alpha_bar_prev must be in (0, 1], got {alpha_bar_prev}")
        guided = math.sqrt(alpha_bar_prev) * guided + math.sqrt(1.0 - alpha_bar_prev) * np.asarray(eps, dtype=float)
    m = _mask_factor(mask, x_t).astype(bool)
    m = np.broadcast_to(m, x_t.shape)
    return np.where(m, x_t, guided)


def guided_reverse_step(
    x_t: Array,
    denoiser: Denoiser,
    providers: Mapping[str, LossTermProvider],
    weights: GuidanceWeights,
    mask: raster.Mask,
    schedule: NoiseSchedule,
    t: int,
    *,
    renoise: bool = False,
) -> Array:
    """Reverse step t -> t-1.

    As written, the unmasked region jumps straight to the guided clean
    estimate. renoise=True instead re-noises it to level t-1 with the
    predicted noise, which keeps multi-step runs on a consistent noise level.
    """
    if not 1 <= t <= schedule.T:
        raise ValueError(f"t must be in [1, {schedule.T}], got {t}")
    eps = denoiser(x_t, t)
    return blend_step(
        x_t,
        eps,
        float(schedule.alpha_bar[t]),
        providers,
        weights,
        mask,
        alpha_bar_prev=float(schedule.alpha_bar[t - 1]) if renoise else None,
    )


def tensor_from_rgb(img: Array) -> Array:
    """uint8 (H,W,3) image -> float (3,H,W) tensor in [-1, 1]."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeMismatch(f"expected (H,W,3) image, got {img.shape}")
    return img.astype(float).transpose(2, 0, 1) / 127.5 - 1.0


def rgb_from_tensor(x: Array) -> Array:
    """float (3,H,W) tensor -> uint8 (H,W,3), clipping to [-1, 1]."""
    x = _check_image(x)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ShapeMismatch(f"expected (3,H,W) tensor, got {x.shape}")
    u8 = np.round((np.clip(x, -1.0, 1.0) + 1.0) * 127.5)
    return u8.astype(np.uint8).transpose(1, 2, 0)
