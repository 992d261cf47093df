"""Augmentations used to synthesize minority-class samples.

Each variant of an image is one :class:`AugmentOp` applied to the original
(ops are not chained).  Random parameters are drawn from a generator
seeded by the op's own seed, so a (kind, seed) pair fully determines the
output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy import ndimage

from .imaging import resize

# k augmentations per image take this prefix
PRIORITY = (
    "flip",
    "rescale_0.9",
    "rescale_0.8",
    "rotation",
    "contrast",
    "rescale_0.7",
    "hue",
    "saturation",
    "gamma",
    "crop",
    "rescale_0.5",
    "rotation",
    "contrast",
)
MAX_AUGMENTATIONS = len(PRIORITY)

ROTATION_DEGREES = 15.0
CONTRAST_RANGE = (0.8, 1.2)
HUE_DEGREES = 10.0
SATURATION_RANGE = (0.8, 1.2)
GAMMA_RANGE = (0.8, 1.25)
CROP_MIN_AREA = 0.85


@dataclass(frozen=True)
class AugmentOp:
    kind: str
    seed: int

    def __call__(self, image: np.ndarray) -> np.ndarray:
        return apply_augmentation(image, self.kind, self.seed)


def _rescale(image: np.ndarray, ratio: float) -> np.ndarray:
    h, w = image.shape[:2]
    nh, nw = max(1, round(h * ratio)), max(1, round(w * ratio))
    small = resize(image, nh, nw)
    out = np.zeros_like(image)
    top, left = (h - nh) // 2, (w - nw) // 2
    out[top:top + nh, left:left + nw] = small
    return out


def _crop(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    h, w = image.shape[:2]
    frac = np.sqrt(rng.uniform(CROP_MIN_AREA, 1.0))
    ch, cw = max(1, round(h * frac)), max(1, round(w * frac))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return resize(image[top:top + ch, left:left + cw], h, w)


def apply_augmentation(image: np.ndarray, kind: str, seed: int) -> np.ndarray:
    """Apply one augmentation; output has the input's shape and stays in [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if kind == "none":
        out = img.copy()
    elif kind == "flip":
        out = img[:, ::-1].copy()
    elif kind.startswith("rescale_"):
        out = _rescale(img, float(kind.split("_", 1)[1]))
    elif kind == "crop":
        out = _crop(img, rng)
    elif kind == "rotation":
        angle = rng.uniform(-ROTATION_DEGREES, ROTATION_DEGREES)
        out = ndimage.rotate(img, angle, axes=(1, 0), reshape=False, order=1, mode="constant", cval=0.0)
    elif kind == "contrast":
        f = rng.uniform(*CONTRAST_RANGE)
        mean = img.mean(axis=(0, 1), keepdims=True)
        out = (img - mean) * f + mean
    elif kind == "hue":
        hsv = rgb_to_hsv(np.clip(img, 0.0, 1.0))
        hsv[..., 0] = (hsv[..., 0] + rng.uniform(-HUE_DEGREES, HUE_DEGREES) / 360.0) % 1.0
        out = hsv_to_rgb(hsv)
    elif kind == "saturation":
        hsv = rgb_to_hsv(np.clip(img, 0.0, 1.0))
        hsv[..., 1] = np.clip(hsv[..., 1] * rng.uniform(*SATURATION_RANGE), 0.0, 1.0)
        out = hsv_to_rgb(hsv)
    elif kind == "gamma":
        out = np.clip(img, 0.0, 1.0) ** rng.uniform(*GAMMA_RANGE)
    else:
        raise ValueError(f"unknown augmentation kind {kind!r}")
    return np.clip(out, 0.0, 1.0)


def augmentation_kinds(k: int) -> list[str]:
    """The first ``k`` kinds of the fixed priority order."""
    if k < 0 or k > MAX_AUGMENTATIONS:
        raise ValueError(f"need 0 <= k <= {MAX_AUGMENTATIONS} augmentations, got {k}")
    return list(PRIORITY[:k])
