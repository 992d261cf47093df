"""Eye records, the keyword map and manifest files.

Pair manifest (input, one row per patient)::

    id,left_image_path,right_image_path,left_keywords,right_keywords,N,D,G,C,A,H,M,O

Eye manifest (after per-eye splitting)::

    id,side,image_path,keywords,N,D,G,C,A,H,M,O

Balanced manifest: the eye manifest plus ``balance_class``,
``augmentation`` and ``seed``.  Augmented rows point at the source image;
the augmentation is replayed from (kind, seed) when the image is loaded.

Image paths are resolved relative to the manifest's directory.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CLASS_NAMES = ("N", "D", "G", "C", "A", "H", "M", "O")
CLASS_TITLES = ("Normal", "Diabetes", "Glaucoma", "Cataract", "AMD", "Hypertension", "Myopia", "Others")
ARTIFACT = "artifact"

PAIR_FIELDS = ("id", "left_image_path", "right_image_path", "left_keywords", "right_keywords") + CLASS_NAMES
EYE_FIELDS = ("id", "side", "image_path", "keywords") + CLASS_NAMES
BALANCED_FIELDS = EYE_FIELDS + ("balance_class", "augmentation", "seed")

# First matching pattern per keyword wins, so specific phrases precede
# generic ones (hypertensive before proliferative retinopathy, myopic
# before maculopathy).
DEFAULT_KEYWORD_TABLE = """\
# pattern<TAB>class   class is one of N D G C A H M O, or "artifact"
# matching is case-insensitive substring search; rows are tried in order
low-quality image	artifact
low image quality	artifact
optical disk photographically invisible	artifact
optic disk photographically invisible	artifact
lens dust	artifact
image offset	artifact
normal fundus	N
hypertensive	H
diabetic retinopathy	D
proliferative retinopathy	D
glaucoma	G
cataract	C
age-related macular degeneration	A
macular degeneration	A
myopi	M
epiretinal membrane	O
drusen	O
laser spot	O
tessellated fundus	O
vitreous degeneration	O
pigment epithelium proliferation	O
retinal pigmentation	O
vein occlusion	O
artery occlusion	O
myelinated nerve fibers	O
chorioretinal atrophy	O
refractive media opacity	O
maculopathy	O
retinitis pigmentosa	O
optic disc edema	O
macular hole	O
retinal detachment	O
arteriosclerosis	O
vascular loop	O
"""


class ManifestError(ValueError):
    """A manifest row could not be read; carries the offending row number."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class KeywordMap:
    patterns: tuple[tuple[str, int], ...]
    artifacts: tuple[str, ...]

    def __post_init__(self):
        if not self.patterns:
            raise ValueError("keyword map has no class patterns")
        overlap = {p for p, _ in self.patterns} & set(self.artifacts)
        if overlap:
            raise ValueError(f"patterns listed both as class and artifact: {sorted(overlap)}")

    def classify(self, keyword: str) -> int | None:
        k = keyword.lower()
        for pattern, cls in self.patterns:
            if pattern in k:
                return cls
        return None

    def is_artifact(self, text: str) -> bool:
        t = text.lower()
        return any(a in t for a in self.artifacts)


def parse_keyword_table(text: str) -> KeywordMap:
    patterns, artifacts = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "\t" not in line:
            raise ValueError(f"keyword table line {lineno}: expected '<pattern>\\t<class>'")
        pattern, target = (s.strip() for s in line.rsplit("\t", 1))
        if not pattern:
            raise ValueError(f"keyword table line {lineno}: empty pattern")
        if target == ARTIFACT:
            artifacts.append(pattern.lower())
        elif target in CLASS_NAMES:
            patterns.append((pattern.lower(), CLASS_NAMES.index(target)))
        else:
            raise ValueError(f"keyword table line {lineno}: unknown class {target!r}")
    return KeywordMap(tuple(patterns), tuple(artifacts))


def load_keyword_map(path: str | Path | None = None) -> KeywordMap:
    if path is None:
        return parse_keyword_table(DEFAULT_KEYWORD_TABLE)
    return parse_keyword_table(Path(path).read_text(encoding="utf-8"))


def split_keywords(text: str) -> list[str]:
    return [k.strip() for k in re.split(r"[,，;]", text or "") if k.strip()]


@dataclass(frozen=True)
class EyeRecord:
    patient_id: str
    side: str
    image: str
    keywords: tuple[str, ...]
    label: tuple[int, ...]

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.patient_id, self.side, self.image)

    def label_array(self) -> np.ndarray:
        return np.array(self.label, dtype=np.int64)


@dataclass(frozen=True)
class BalancedRecord:
    record: EyeRecord
    balance_class: str
    augmentation: str = "none"
    seed: int = 0


@dataclass(frozen=True)
class PairRecord:
    patient_id: str
    left_image: str
    right_image: str
    left_keywords: str
    right_keywords: str
    label: tuple[int, ...] = (0,) * len(CLASS_NAMES)


@dataclass
class SplitResult:
    left: EyeRecord | None
    right: EyeRecord | None
    removed: list[EyeRecord] = field(default_factory=list)
    unmapped: list[EyeRecord] = field(default_factory=list)

    @property
    def kept(self) -> list[EyeRecord]:
        return [r for r in (self.left, self.right) if r is not None]


def label_eye(patient_id: str, side: str, image: str, keyword_text: str,
              kmap: KeywordMap) -> tuple[EyeRecord, str]:
    """Label one eye; returns (record, status) with status kept/removed/unmapped."""
    keywords = tuple(split_keywords(keyword_text))
    bits = [0] * len(CLASS_NAMES)
    if kmap.is_artifact(keyword_text or ""):
        return EyeRecord(patient_id, side, image, keywords, tuple(bits)), "removed"
    for kw in keywords:
        cls = kmap.classify(kw)
        if cls is not None:
            bits[cls] = 1
    status = "kept" if any(bits) else "unmapped"
    return EyeRecord(patient_id, side, image, keywords, tuple(bits)), status


def split_pair_labels(pair: PairRecord, kmap: KeywordMap) -> SplitResult:
    """Give each eye the union of classes its own keywords name.

    Eyes with an artifact phrase are removed; eyes whose keywords match no
    class are reported as unmapped rather than dropped silently.
    """
    result = SplitResult(None, None)
    for side, image, text in (("left", pair.left_image, pair.left_keywords),
                              ("right", pair.right_image, pair.right_keywords)):
        if not image:
            continue
        rec, status = label_eye(pair.patient_id, side, image, text, kmap)
        if status == "removed":
            result.removed.append(rec)
        elif status == "unmapped":
            result.unmapped.append(rec)
        else:
            setattr(result, side, rec)
    return result


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------

def _read_rows(path: Path, required: Sequence[str]) -> list[dict[str, str]]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot open manifest {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise ManifestError(f"{path}: missing columns {missing}", row=1)
        return list(reader)


def _label_from_row(row: dict[str, str], lineno: int) -> tuple[int, ...]:
    try:
        bits = tuple(int(row[c]) for c in CLASS_NAMES)
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"label columns must be 0/1 ({exc})", row=lineno) from exc
    if any(b not in (0, 1) for b in bits):
        raise ManifestError("label columns must be 0/1", row=lineno)
    return bits


def read_pair_manifest(path: str | Path) -> list[PairRecord]:
    path = Path(path)
    out = []
    for lineno, row in enumerate(_read_rows(path, PAIR_FIELDS), 2):
        if not row["id"]:
            raise ManifestError("empty id", row=lineno)
        out.append(PairRecord(
            patient_id=row["id"],
            left_image=row["left_image_path"] or "",
            right_image=row["right_image_path"] or "",
            left_keywords=row["left_keywords"] or "",
            right_keywords=row["right_keywords"] or "",
            label=_label_from_row(row, lineno),
        ))
    return out


def write_pair_manifest(path: str | Path, pairs: Iterable[PairRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PAIR_FIELDS)
        for p in pairs:
            w.writerow([p.patient_id, p.left_image, p.right_image, p.left_keywords, p.right_keywords, *p.label])
    return path


def _eye_from_row(row: dict[str, str], lineno: int) -> EyeRecord:
    if row["side"] not in ("left", "right"):
        raise ManifestError(f"side must be left/right, got {row['side']!r}", row=lineno)
    return EyeRecord(row["id"], row["side"], row["image_path"],
                     tuple(split_keywords(row["keywords"])), _label_from_row(row, lineno))


def _eye_row(r: EyeRecord) -> list:
    return [r.patient_id, r.side, r.image, ", ".join(r.keywords), *r.label]


def read_eye_manifest(path: str | Path) -> list[EyeRecord]:
    path = Path(path)
    return [_eye_from_row(row, i) for i, row in enumerate(_read_rows(path, EYE_FIELDS), 2)]


def write_eye_manifest(path: str | Path, records: Iterable[EyeRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(EYE_FIELDS)
        for r in records:
            w.writerow(_eye_row(r))
    return path


def read_balanced_manifest(path: str | Path) -> list[BalancedRecord]:
    """Read a balanced manifest; a plain eye manifest reads as unaugmented rows."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    if "augmentation" not in header:
        return [BalancedRecord(r, "", "none", 0) for r in read_eye_manifest(path)]
    out = []
    for i, row in enumerate(_read_rows(path, BALANCED_FIELDS), 2):
        try:
            seed = int(row["seed"])
        except ValueError as exc:
            raise ManifestError(f"bad seed {row['seed']!r}", row=i) from exc
        out.append(BalancedRecord(_eye_from_row(row, i), row["balance_class"], row["augmentation"], seed))
    return out


def write_balanced_manifest(path: str | Path, records: Iterable[BalancedRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(BALANCED_FIELDS)
        for b in records:
            w.writerow(_eye_row(b.record) + [b.balance_class, b.augmentation, b.seed])
    return path


def class_histogram(records: Iterable[EyeRecord]) -> dict[str, int]:
    counts = np.zeros(len(CLASS_NAMES), dtype=np.int64)
    for r in records:
        counts += np.asarray(r.label)
    return dict(zip(CLASS_NAMES, counts.tolist()))


def with_image(record: EyeRecord, image: str) -> EyeRecord:
    return replace(record, image=image)
