"""Class-balancing-factor (CBF) over/undersampling.

Oversampling a class with factor k targets ``N * k`` samples by default
(``rule="table"``); ``rule="literal"`` targets ``N * (1 + k)``.  Each
source image is kept and contributes ``M / N - 1`` augmented variants.
Undersampling keeps ``floor(N / k)`` images chosen uniformly without
replacement.

Pools are per class: an image carrying several labels is balanced once in
each of its classes, and every output row records the class it was
balanced under.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .augment import MAX_AUGMENTATIONS, augmentation_kinds
from .records import CLASS_NAMES, BalancedRecord, EyeRecord

# Per-image class counts and CBF choices reported for ODIR-5K after
# per-eye splitting, with the resulting sample counts as printed.
ODIR_CLASS_COUNTS = {"N": 1135, "D": 1131, "G": 207, "C": 211, "A": 171, "H": 94, "M": 177, "O": 944}
ODIR_OVERSAMPLE_CBF = {"N": 0, "D": 0, "G": 5, "C": 5, "A": 7, "H": 12, "M": 6, "O": 0}
ODIR_UNDERSAMPLE_CBF = {"N": 12, "D": 11, "G": 2, "C": 2, "A": 2, "H": 1, "M": 2, "O": 10}
ODIR_REPORTED_OVERSAMPLED = {"N": 1135, "D": 1131, "G": 1035, "C": 1055, "A": 1197, "H": 1128, "M": 1062, "O": 944}
ODIR_REPORTED_UNDERSAMPLED = {"N": 95, "D": 103, "G": 104, "C": 106, "A": 85, "H": 94, "M": 86, "O": 95}


@dataclass(frozen=True)
class ClassPlan:
    mode: str  # none | oversample | undersample
    k: int
    n: int
    m: int

    @property
    def augmentations_per_image(self) -> int:
        if self.mode != "oversample" or self.n == 0:
            return 0
        return self.m // self.n - 1


@dataclass(frozen=True)
class BalancePlan:
    classes: dict[str, ClassPlan]
    rule: str = "table"

    def targets(self) -> dict[str, int]:
        return {c: p.m for c, p in self.classes.items()}

    def table_lines(self, title: str = "") -> list[str]:
        lines = [title] if title else []
        lines.append(f"{'class':<6}{'mode':<13}{'CBF':>5}{'before':>9}{'after':>9}")
        for c, p in self.classes.items():
            lines.append(f"{c:<6}{p.mode:<13}{p.k:>5}{p.n:>9}{p.m:>9}")
        return lines


def _check_inputs(counts: Mapping[str, int], cbf: Mapping[str, int]) -> None:
    unknown = set(cbf) - set(counts)
    if unknown:
        raise ValueError(f"CBF given for classes without counts: {sorted(unknown)}")
    for c, n in counts.items():
        if n < 0:
            raise ValueError(f"negative count for class {c}")
    for c, k in cbf.items():
        if int(k) != k or k < 0:
            raise ValueError(f"CBF must be a non-negative integer, got {k!r} for {c}")


def plan_oversample(counts: Mapping[str, int], cbf: Mapping[str, int], rule: str = "table") -> BalancePlan:
    """k = 0 leaves a class alone; otherwise M = N*k (table) or N*(1+k) (literal)."""
    if rule not in ("table", "literal"):
        raise ValueError(f"rule must be 'table' or 'literal', got {rule!r}")
    _check_inputs(counts, cbf)
    plans = {}
    for c, n in counts.items():
        k = int(cbf.get(c, 0))
        if k == 0:
            plans[c] = ClassPlan("none", 0, n, n)
        else:
            plans[c] = ClassPlan("oversample", k, n, n * k if rule == "table" else n * (1 + k))
    return BalancePlan(plans, rule)


def plan_undersample(counts: Mapping[str, int], cbf: Mapping[str, int]) -> BalancePlan:
    """M = floor(N / k); every listed class needs k >= 1."""
    _check_inputs(counts, cbf)
    plans = {}
    for c, n in counts.items():
        if c not in cbf:
            plans[c] = ClassPlan("none", 0, n, n)
            continue
        k = int(cbf[c])
        if k == 0:
            raise ValueError(f"undersampling CBF for class {c} must be >= 1")
        plans[c] = ClassPlan("undersample", k, n, n // k)
    return BalancePlan(plans, "floor")


def derive_seed(seed: int, *parts: object) -> int:
    """Stable 63-bit seed from a base seed and string-able parts."""
    words = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(str(p).encode("utf-8")) for p in parts]
    return int(np.random.SeedSequence(words).generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def class_pools(records: Iterable[EyeRecord], class_names: Sequence[str] = CLASS_NAMES) -> dict[str, list[EyeRecord]]:
    ordered = sorted(records, key=lambda r: r.key)
    return {c: [r for r in ordered if r.label[CLASS_NAMES.index(c)]] for c in class_names}


def execute_balance(records: Iterable[EyeRecord], plan: BalancePlan, seed: int = 0) -> list[BalancedRecord]:
    """Materialize ``plan`` as manifest rows (augmentations stay lazy).

    Records are sorted by (patient, side, image) first, so the output does
    not depend on input order.
    """
    pools = class_pools(records, tuple(plan.classes))
    out: list[BalancedRecord] = []
    for c, p in plan.classes.items():
        pool = pools[c]
        if len(pool) != p.n:
            raise ValueError(f"class {c}: plan expects {p.n} records, found {len(pool)}")
        if p.mode == "undersample":
            rng = np.random.default_rng(derive_seed(seed, "undersample", c))
            keep = np.sort(rng.choice(len(pool), size=p.m, replace=False))
            out.extend(BalancedRecord(pool[i], c) for i in keep)
        elif p.mode == "oversample":
            if p.m % max(p.n, 1):
                raise ValueError(f"class {c}: target {p.m} is not a multiple of {p.n}")
            n_aug = p.augmentations_per_image
            if n_aug > MAX_AUGMENTATIONS:
                raise ValueError(
                    f"class {c}: {n_aug} augmentations per image requested, only {MAX_AUGMENTATIONS} available"
                )
            kinds = augmentation_kinds(n_aug)
            for r in pool:
                out.append(BalancedRecord(r, c))
                for i, kind in enumerate(kinds):
                    out.append(BalancedRecord(r, c, kind, derive_seed(seed, *r.key, i)))
        else:
            out.extend(BalancedRecord(r, c) for r in pool)
    return out


def balanced_counts(rows: Iterable[BalancedRecord]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for b in rows:
        counts[b.balance_class] = counts.get(b.balance_class, 0) + 1
    return counts


def parse_cbf(text: str) -> dict[str, int]:
    """Parse ``"N=0,D=0,G=5"`` or the presets ``odir-over`` / ``odir-under``."""
    presets = {"odir-over": ODIR_OVERSAMPLE_CBF, "odir-under": ODIR_UNDERSAMPLE_CBF}
    if text in presets:
        return dict(presets[text])
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        name, _, value = part.partition("=")
        name = name.strip()
        if name not in CLASS_NAMES or not value.strip().isdigit():
            raise ValueError(f"bad CBF entry {part!r}; expected CLASS=int with CLASS in {CLASS_NAMES}")
        out[name] = int(value)
    return out
