"""Manifest-level steps: preprocess pairs into eye images, load datasets."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import apply_augmentation
from .imaging import load_image, preprocess_image, resize, save_image, to_chw
from .records import (
    CLASS_NAMES,
    BalancedRecord,
    EyeRecord,
    KeywordMap,
    ManifestError,
    class_histogram,
    read_balanced_manifest,
    read_pair_manifest,
    split_pair_labels,
    with_image,
    write_eye_manifest,
)

logger = logging.getLogger(__name__)


@dataclass
class PreprocessSummary:
    kept: list[EyeRecord] = field(default_factory=list)
    removed: list[EyeRecord] = field(default_factory=list)
    unmapped: list[EyeRecord] = field(default_factory=list)

    def histogram(self) -> dict[str, int]:
        return class_histogram(self.kept)

    def lines(self) -> list[str]:
        out = [
            f"kept: {len(self.kept)}",
            f"removed: {len(self.removed)}",
            f"unmapped: {len(self.unmapped)}",
            "class samples:",
        ]
        out += [f"  {c}: {n}" for c, n in self.histogram().items()]
        for r in self.unmapped:
            out.append(f"unmapped {r.patient_id}/{r.side}: {', '.join(r.keywords) or '(no keywords)'}")
        for r in self.removed:
            out.append(f"removed {r.patient_id}/{r.side}: {', '.join(r.keywords)}")
        return out


def split_manifest(manifest: str | Path, kmap: KeywordMap) -> PreprocessSummary:
    summary = PreprocessSummary()
    for pair in read_pair_manifest(manifest):
        res = split_pair_labels(pair, kmap)
        summary.kept += res.kept
        summary.removed += res.removed
        summary.unmapped += res.unmapped
    return summary


def preprocess_manifest(manifest: str | Path, out_dir: str | Path, kmap: KeywordMap,
                        size: int = 224) -> tuple[Path, PreprocessSummary]:
    """Split pairs per eye, drop artifacts, FOV-crop and resize each kept eye.

    Writes ``images/<id>_<side>.png``, ``processed.csv`` and
    ``preprocess_summary.txt`` under ``out_dir``.
    """
    manifest = Path(manifest)
    out_dir = Path(out_dir)
    summary = split_manifest(manifest, kmap)
    processed = []
    for rec in summary.kept:
        src = manifest.parent / rec.image
        try:
            img = load_image(src)
        except OSError as exc:
            raise ManifestError(f"cannot read image {src} for {rec.patient_id}/{rec.side}: {exc}") from exc
        rel = f"images/{rec.patient_id}_{rec.side}.png"
        save_image(out_dir / rel, preprocess_image(img, size))
        processed.append(with_image(rec, rel))
    summary.kept = processed
    path = write_eye_manifest(out_dir / "processed.csv", processed)
    (out_dir / "preprocess_summary.txt").write_text("\n".join(summary.lines()) + "\n")
    return path, summary


def load_record_image(base: Path, row: BalancedRecord, size: int | None = None) -> np.ndarray:
    img = load_image(base / row.record.image)
    if size is not None and img.shape[:2] != (size, size):
        img = resize(img, size, size)
    if row.augmentation != "none":
        img = apply_augmentation(img, row.augmentation, row.seed)
    return img


def load_dataset(manifest: str | Path, size: int | None = None) -> tuple[np.ndarray, np.ndarray, list[BalancedRecord]]:
    """Images (n, 3, H, W) in [0, 1], labels (n, 8), and the manifest rows."""
    manifest = Path(manifest)
    rows = read_balanced_manifest(manifest)
    if not rows:
        raise ManifestError(f"{manifest}: no records")
    images = np.stack([load_record_image(manifest.parent, r, size) for r in rows])
    labels = np.array([r.record.label for r in rows], dtype=np.float64)
    if labels.shape[1] != len(CLASS_NAMES):
        raise ManifestError(f"{manifest}: expected {len(CLASS_NAMES)} label columns")
    return to_chw(images), labels, rows
