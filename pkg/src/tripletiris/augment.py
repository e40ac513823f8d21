"""Training-time random augmentation and the fixed six-view test-time set."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .dataset import LabeledImage


class Augmentation(str, Enum):
    IDENTITY = "identity"
    ROTATE_POS = "rotate+30"
    FLIP_VERTICAL = "flip_vertical"
    SHARPEN = "sharpen"
    FLIP_HORIZONTAL = "flip_horizontal"
    ROTATE_NEG = "rotate-30"


# Concatenation layout of test-time embeddings depends on this order.
TTA_ORDER = (
    Augmentation.IDENTITY,
    Augmentation.ROTATE_POS,
    Augmentation.FLIP_VERTICAL,
    Augmentation.SHARPEN,
    Augmentation.FLIP_HORIZONTAL,
    Augmentation.ROTATE_NEG,
)
NON_IDENTITY = TTA_ORDER[1:]

ROTATION_DEG = 30.0


@dataclass(frozen=True)
class AugmentConfig:
    sigma: float = 1.0
    amount: float = 1.0
    p_train: float = 0.5

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("aug.sigma must be positive")
        if self.amount < 0:
            raise ValueError("aug.amount must be non-negative")
        if not 0.0 <= self.p_train <= 1.0:
            raise ValueError("aug.p_train must lie in [0, 1]")


def rotate(pixels: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate counter-clockwise about the center; bilinear, zero fill."""
    out = ndimage.rotate(pixels, degrees, reshape=False, order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0)


def unsharp(pixels: np.ndarray, sigma: float = 1.0, amount: float = 1.0) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if amount < 0:
        raise ValueError("amount must be non-negative")
    if amount == 0:
        return pixels.copy()
    blurred = ndimage.gaussian_filter(pixels, sigma, mode="reflect", truncate=3.0)
    return np.clip(pixels + amount * (pixels - blurred), 0.0, 1.0)


def sharpen(image: LabeledImage, sigma: float = 1.0, amount: float = 1.0) -> LabeledImage:
    """Unsharp mask: clamp(x + amount * (x - gaussian_blur(x, sigma)), 0, 1)."""
    return image.with_pixels(unsharp(image.pixels, sigma, amount))


def _transform(kind: Augmentation, pixels: np.ndarray, cfg: AugmentConfig) -> np.ndarray:
    if kind is Augmentation.IDENTITY:
        return pixels
    if kind is Augmentation.ROTATE_POS:
        return rotate(pixels, ROTATION_DEG)
    if kind is Augmentation.ROTATE_NEG:
        return rotate(pixels, -ROTATION_DEG)
    if kind is Augmentation.FLIP_VERTICAL:
        return pixels[::-1, :].copy()
    if kind is Augmentation.FLIP_HORIZONTAL:
        return pixels[:, ::-1].copy()
    if kind is Augmentation.SHARPEN:
        return unsharp(pixels, cfg.sigma, cfg.amount)
    raise ValueError(f"unknown augmentation {kind!r}")


def apply(augmentation, image: LabeledImage, cfg: AugmentConfig | None = None) -> LabeledImage:
    kind = Augmentation(augmentation)
    if kind is Augmentation.IDENTITY:
        return image
    return image.with_pixels(_transform(kind, image.pixels, cfg or AugmentConfig()))


def draw_train_augmentation(rng: np.random.Generator, p_aug: float) -> Augmentation:
    """Identity with probability 1 - p_aug, else one of the five others uniformly."""
    if rng.random() >= p_aug:
        return Augmentation.IDENTITY
    return NON_IDENTITY[int(rng.integers(len(NON_IDENTITY)))]


def random_train_augment(
    image: LabeledImage, rng: np.random.Generator, cfg: AugmentConfig | None = None
) -> LabeledImage:
    cfg = cfg or AugmentConfig()
    return apply(draw_train_augmentation(rng, cfg.p_train), image, cfg)


def tta_set(image: LabeledImage, cfg: AugmentConfig | None = None) -> list[LabeledImage]:
    cfg = cfg or AugmentConfig()
    return [apply(kind, image, cfg) for kind in TTA_ORDER]
