"""Image I/O, field-of-view crop and bilinear resize.

Images are (H, W, 3) float64 arrays in [0, 1].  8-bit files are scaled by
1/255 on load and rounded back on save.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

BLACK_THRESHOLD = 10 / 255


class DegenerateInputError(ValueError):
    pass


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def save_image(path: str | Path, image: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = to_uint8(image)
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path)
    return path


def fov_bbox(image: np.ndarray, threshold: float = BLACK_THRESHOLD) -> tuple[int, int, int, int]:
    """(top, bottom, left, right), inclusive, of pixels brighter than ``threshold``.

    Brightness is the max over channels.
    """
    img = np.asarray(image)
    bright = img.max(axis=2) > threshold if img.ndim == 3 else img > threshold
    rows = np.flatnonzero(bright.any(axis=1))
    cols = np.flatnonzero(bright.any(axis=0))
    if rows.size == 0:
        raise DegenerateInputError("image is entirely black; no field of view to crop")
    return int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1])


def pad_to_square(image: np.ndarray) -> np.ndarray:
    """Center on a black square canvas; odd leftovers go bottom/right."""
    h, w = image.shape[:2]
    side = max(h, w)
    top = (side - h) // 2
    left = (side - w) // 2
    pads = [(top, side - h - top), (left, side - w - left)] + [(0, 0)] * (image.ndim - 2)
    return np.pad(image, pads)


def crop_fov(image: np.ndarray, threshold: float = BLACK_THRESHOLD) -> np.ndarray:
    """Tight crop around the non-black field of view, padded to a square."""
    top, bottom, left, right = fov_bbox(image, threshold)
    return pad_to_square(np.asarray(image)[top:bottom + 1, left:right + 1])


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # corner-aligned: output 0 -> input 0, output n_out-1 -> input n_in-1
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.clip(np.floor(pos).astype(np.int64), 0, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize(image: np.ndarray, height: int, width: int | None = None) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling.

    Output pixel (i, j) samples the input at
    (i * (H-1)/(h-1), j * (W-1)/(w-1)), so corners map to corners and an
    affine intensity ramp is reproduced exactly.  Works on (H, W) and
    (H, W, C) arrays.
    """
    width = height if width is None else width
    img = np.asarray(image, dtype=np.float64)
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise DegenerateInputError("cannot resize an empty image")
    if img.shape[:2] == (height, width):
        return img.copy()
    r0, r1, fr = _axis_weights(img.shape[0], height)
    c0, c1, fc = _axis_weights(img.shape[1], width)
    extra = (None,) * (img.ndim - 2)
    fr = fr[(slice(None), None) + extra]
    fc = fc[(slice(None),) + extra]
    rows = img[r0] * (1.0 - fr) + img[r1] * fr
    return rows[:, c0] * (1.0 - fc) + rows[:, c1] * fc


def preprocess_image(image: np.ndarray, size: int = 224, threshold: float = BLACK_THRESHOLD) -> np.ndarray:
    return resize(crop_fov(image, threshold), size, size)


def to_chw(images: np.ndarray) -> np.ndarray:
    """(n, H, W, 3) or (H, W, 3) -> channel-first."""
    images = np.asarray(images)
    if images.ndim == 3:
        return np.ascontiguousarray(images.transpose(2, 0, 1))
    return np.ascontiguousarray(images.transpose(0, 3, 1, 2))
