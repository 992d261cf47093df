"""Synthetic fundus-like images with one colored motif per class.

Every image is an orange disk with mild noise on a black background.  Each
label bit paints that class's motif (a patch with a class-specific color
and texture) at a random position inside the disk, so labels and motif
locations are exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import save_image
from .records import CLASS_NAMES, EyeRecord, PairRecord, write_pair_manifest

BACKGROUND = np.array([0.80, 0.36, 0.16])
MOTIF_COLORS = np.array([
    [1.00, 1.00, 0.20],  # N: yellow disk
    [0.05, 0.05, 0.30],  # D: dark navy dots
    [0.10, 0.85, 0.10],  # G: green ring
    [1.00, 1.00, 1.00],  # C: white square
    [0.10, 0.30, 1.00],  # A: blue square
    [0.10, 0.90, 0.90],  # H: cyan horizontal stripes
    [0.95, 0.10, 0.90],  # M: magenta vertical stripes
    [0.50, 0.50, 0.50],  # O: gray/black checkerboard
])
# keywords written for each class in generated manifests
MOTIF_KEYWORDS = (
    "normal fundus",
    "moderate non proliferative retinopathy",
    "glaucoma",
    "cataract",
    "dry age-related macular degeneration",
    "hypertensive retinopathy",
    "pathological myopia",
    "epiretinal membrane",
)
MOTIF_FRACTION = 0.25


@dataclass
class SyntheticDataset:
    images: np.ndarray  # (n, size, size, 3)
    labels: np.ndarray  # (n, 8)
    boxes: list[dict[int, tuple[int, int, int, int]]]  # class -> (top, bottom, left, right), inclusive
    records: list[EyeRecord]


def motif_mask(cls: int, side: int) -> np.ndarray:
    """Boolean (side, side) mask of pixels painted with the class color."""
    r, c = np.mgrid[0:side, 0:side]
    centre = (side - 1) / 2.0
    dist = np.hypot(r - centre, c - centre)
    period = max(2, side // 6)
    if cls == 0:
        return dist <= side / 2.0
    if cls == 1:
        step = max(3, side // 4)
        return ((r % step) < max(1, step // 2)) & ((c % step) < max(1, step // 2))
    if cls == 2:
        return (dist <= side / 2.0) & (dist >= side / 4.0)
    if cls in (3, 4):
        return np.ones((side, side), dtype=bool)
    if cls == 5:
        return (r % period) < period / 2
    if cls == 6:
        return (c % period) < period / 2
    if cls == 7:
        return ((r // period + c // period) % 2) == 0
    raise ValueError(f"no motif for class {cls}")


def paint_motif(image: np.ndarray, cls: int, top: int, left: int, side: int) -> None:
    mask = motif_mask(cls, side)
    patch = image[top:top + side, left:left + side]
    patch[mask] = MOTIF_COLORS[cls]
    if cls == 7:
        patch[~mask] = 0.0


def fundus_background(size: int, rng: np.random.Generator, width: int | None = None) -> np.ndarray:
    width = size if width is None else width
    img = np.zeros((size, width, 3))
    r, c = np.mgrid[0:size, 0:width]
    disk = np.hypot(r - (size - 1) / 2.0, c - (width - 1) / 2.0) <= size / 2.0 - 0.5
    noise = rng.normal(0.0, 0.03, size=(size, width, 1))
    img[disk] = np.clip(BACKGROUND + noise[disk], 0.0, 1.0)
    return img


def _place(size: int, side: int, taken: list[tuple[int, int]], rng: np.random.Generator) -> tuple[int, int]:
    # inside the square inscribed in the disk, not overlapping earlier motifs
    inner = int(size / np.sqrt(2.0)) - 2
    lo = (size - inner) // 2
    hi = lo + inner - side
    for _ in range(200):
        top, left = (int(v) for v in rng.integers(lo, max(lo, hi) + 1, size=2))
        if all(abs(top - t) >= side or abs(left - l) >= side for t, l in taken):
            return top, left
    raise RuntimeError("could not place motif without overlap; image too small")


def render(label_bits, size: int, rng: np.random.Generator) -> tuple[np.ndarray, dict[int, tuple[int, int, int, int]]]:
    img = fundus_background(size, rng)
    side = max(6, int(round(size * MOTIF_FRACTION)))
    boxes: dict[int, tuple[int, int, int, int]] = {}
    taken: list[tuple[int, int]] = []
    for cls in np.flatnonzero(label_bits):
        top, left = _place(size, side, taken, rng)
        taken.append((top, left))
        paint_motif(img, int(cls), top, left, side)
        boxes[int(cls)] = (top, top + side - 1, left, left + side - 1)
    return img, boxes


def generate_synthetic_dataset(
    n_per_class: int,
    seed: int = 0,
    size: int = 224,
    composites: int = 0,
    num_classes: int = len(CLASS_NAMES),
) -> SyntheticDataset:
    """``n_per_class`` single-label images per class plus ``composites`` two-label images."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    labels = []
    for cls in range(num_classes):
        for _ in range(n_per_class):
            bits = np.zeros(len(CLASS_NAMES), dtype=np.int64)
            bits[cls] = 1
            labels.append(bits)
    for _ in range(composites):
        bits = np.zeros(len(CLASS_NAMES), dtype=np.int64)
        bits[rng.choice(num_classes, size=2, replace=False)] = 1
        labels.append(bits)

    images, boxes, records = [], [], []
    for i, bits in enumerate(labels):
        img, bx = render(bits, size, rng)
        images.append(img)
        boxes.append(bx)
        kw = tuple(MOTIF_KEYWORDS[j] for j in np.flatnonzero(bits))
        records.append(EyeRecord(f"syn{i:05d}", "left", f"syn{i:05d}.png", kw, tuple(int(b) for b in bits)))
    return SyntheticDataset(np.stack(images), np.stack(labels), boxes, records)


def write_synthetic_corpus(
    out_dir: str | Path,
    n_per_class: int,
    seed: int = 0,
    size: int = 224,
    composites: int = 0,
    artifacts: int = 0,
) -> Path:
    """Write images plus a left/right pair manifest in the ODIR annotation layout.

    Images are drawn on a wider black canvas so the FOV crop has work to
    do.  ``artifacts`` extra eyes carry "lens dust" and should be removed
    by preprocessing.  Returns the manifest path.
    """
    out_dir = Path(out_dir)
    ds = generate_synthetic_dataset(n_per_class, seed, size, composites)
    rng = np.random.default_rng(seed + 1)
    margin = size // 4
    eyes = []
    for i, (img, rec) in enumerate(zip(ds.images, ds.records)):
        canvas = np.zeros((size, size + 2 * margin, 3))
        canvas[:, margin:margin + size] = img
        name = f"images/eye{i:05d}.png"
        save_image(out_dir / name, canvas)
        eyes.append((name, ", ".join(rec.keywords), rec.label))
    for j in range(artifacts):
        name = f"images/dust{j:05d}.png"
        canvas = np.zeros((size, size + 2 * margin, 3))
        canvas[:, margin:margin + size] = fundus_background(size, rng)
        save_image(out_dir / name, canvas)
        eyes.append((name, "lens dust, normal fundus", (1, 0, 0, 0, 0, 0, 0, 0)))

    pairs = []
    for p in range(0, len(eyes), 2):
        left = eyes[p]
        right = eyes[p + 1] if p + 1 < len(eyes) else ("", "", (0,) * len(CLASS_NAMES))
        pair_label = tuple(int(a or b) for a, b in zip(left[2], right[2]))
        pairs.append(PairRecord(f"P{p // 2:05d}", left[0], right[0], left[1], right[1], pair_label))
    return write_pair_manifest(out_dir / "manifest.csv", pairs)
