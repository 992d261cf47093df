"""Multi-label evaluation metrics.

Precision, recall and F1 are per class with macro (unweighted) averages.
Cohen's kappa defaults to one agreement problem over all flattened
(instance, class) slots.  AUC integrates the ROC curve with the trapezoid
rule over distinct score thresholds, which equals the tie-corrected
Mann-Whitney statistic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CLASS_NAMES = ("N", "D", "G", "C", "A", "H", "M", "O")


class UndefinedMetricError(ValueError):
    """The metric is undefined for the given input (e.g. AUC on one class)."""


def _as_binary(name: str, a) -> np.ndarray:
    a = np.asarray(a)
    if not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0/1 entries")
    return a.astype(np.int64)


def _as_2d(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, 1) if a.ndim == 1 else a


@dataclass
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.tp + self.fp + self.fn + self.tn


def confusion(y_true, y_pred) -> ConfusionCounts:
    t = _as_2d(_as_binary("y_true", y_true))
    p = _as_2d(_as_binary("y_pred", y_pred))
    if t.shape != p.shape:
        raise ValueError(f"shape mismatch: {t.shape} vs {p.shape}")
    return ConfusionCounts(
        tp=((t == 1) & (p == 1)).sum(axis=0),
        fp=((t == 0) & (p == 1)).sum(axis=0),
        fn=((t == 1) & (p == 0)).sum(axis=0),
        tn=((t == 0) & (p == 0)).sum(axis=0),
    )


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    degenerate = den == 0
    return np.where(degenerate, 0.0, num / np.where(degenerate, 1.0, den)), degenerate


@dataclass
class PRF:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    degenerate: np.ndarray  # per class: any zero denominator

    @property
    def macro_precision(self) -> float:
        return float(self.precision.mean())

    @property
    def macro_recall(self) -> float:
        return float(self.recall.mean())

    @property
    def macro_f1(self) -> float:
        return float(self.f1.mean())


def precision_recall_f1(counts: ConfusionCounts) -> PRF:
    """Zero denominators yield 0 and set the class's ``degenerate`` flag."""
    precision, dp = _safe_ratio(counts.tp, counts.tp + counts.fp)
    recall, dr = _safe_ratio(counts.tp, counts.tp + counts.fn)
    f1, df = _safe_ratio(2.0 * precision * recall, precision + recall)
    return PRF(precision, recall, f1, dp | dr | df)


def _kappa_flat(t: np.ndarray, p: np.ndarray) -> tuple[float, bool]:
    t = t.reshape(-1)
    p = p.reshape(-1)
    po = float(np.mean(t == p))
    mt, mp = t.mean(), p.mean()
    pe = float(mt * mp + (1.0 - mt) * (1.0 - mp))
    if pe == 1.0:
        return 0.0, True
    return (po - pe) / (1.0 - pe), False


def cohen_kappa(y_true, y_pred, per_class: bool = False) -> float:
    """Chance-corrected agreement.

    By default all (instance, class) slots form one binary problem; with
    ``per_class=True`` kappa is computed per column and averaged.  Returns 0
    when expected agreement is 1 (use :func:`cohen_kappa_detail` for the
    flag).
    """
    return cohen_kappa_detail(y_true, y_pred, per_class)[0]


def cohen_kappa_detail(y_true, y_pred, per_class: bool = False) -> tuple[float, bool]:
    t = _as_2d(_as_binary("y_true", y_true))
    p = _as_2d(_as_binary("y_pred", y_pred))
    if t.shape != p.shape:
        raise ValueError(f"shape mismatch: {t.shape} vs {p.shape}")
    if not per_class:
        return _kappa_flat(t, p)
    results = [_kappa_flat(t[:, j], p[:, j]) for j in range(t.shape[1])]
    return float(np.mean([k for k, _ in results])), any(flag for _, flag in results)


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # thresholds[0] = +inf gives the (0, 0) point


def roc_curve(y_true, scores) -> RocCurve:
    """ROC points, sweeping the threshold down through each distinct score."""
    y = _as_binary("y_true", y_true).reshape(-1)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if y.shape != s.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {s.shape}")
    pos = int(y.sum())
    neg = y.size - pos
    if pos == 0 or neg == 0:
        raise UndefinedMetricError("ROC needs at least one positive and one negative")

    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    # last index of each run of equal scores
    cut = np.r_[np.nonzero(np.diff(s_sorted))[0], s.size - 1]
    tps = np.cumsum(y_sorted)[cut]
    fps = (cut + 1) - tps
    return RocCurve(
        fpr=np.r_[0.0, fps / neg],
        tpr=np.r_[0.0, tps / pos],
        thresholds=np.r_[np.inf, s_sorted[cut]],
    )


def roc_auc(y_true, scores) -> tuple[float, RocCurve]:
    curve = roc_curve(y_true, scores)
    auc = float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))
    return auc, curve


@dataclass
class MetricsReport:
    threshold: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    auc: np.ndarray  # NaN where undefined
    macro_precision: float
    macro_recall: float
    macro_f1: float
    macro_auc: float  # NaN when no class has a defined AUC
    kappa: float
    kappa_degenerate: bool
    prf_degenerate: np.ndarray
    auc_defined: np.ndarray
    counts: ConfusionCounts
    curves: dict[int, RocCurve] = field(default_factory=dict)
    class_names: tuple[str, ...] = CLASS_NAMES

    def to_lines(self) -> list[str]:
        lines = [
            f"threshold: {self.threshold}",
            f"macro_precision: {self.macro_precision:.6f}",
            f"macro_recall: {self.macro_recall:.6f}",
            f"macro_f1: {self.macro_f1:.6f}",
            f"macro_auc: {self.macro_auc:.6f}",
            f"kappa: {self.kappa:.6f}",
            f"kappa_degenerate: {str(self.kappa_degenerate).lower()}",
        ]
        for j, name in enumerate(self.class_names):
            lines += [
                f"{name}.precision: {self.precision[j]:.6f}",
                f"{name}.recall: {self.recall[j]:.6f}",
                f"{name}.f1: {self.f1[j]:.6f}",
                f"{name}.auc: {self.auc[j]:.6f}" if self.auc_defined[j] else f"{name}.auc: undefined",
                f"{name}.tp_fp_fn_tn: {self.counts.tp[j]},{self.counts.fp[j]},{self.counts.fn[j]},{self.counts.tn[j]}",
                f"{name}.degenerate: {str(bool(self.prf_degenerate[j])).lower()}",
            ]
        return lines

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text("\n".join(self.to_lines()) + "\n")
        return path

    def write_roc_csvs(self, out_dir: str | Path) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for j, curve in sorted(self.curves.items()):
            p = out_dir / f"roc_{self.class_names[j]}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["fpr", "tpr", "threshold"])
                for f, t, th in zip(curve.fpr, curve.tpr, curve.thresholds):
                    w.writerow([repr(float(f)), repr(float(t)), repr(float(th))])
            paths.append(p)
        return paths


def threshold_predictions(probabilities, threshold: float = 0.5) -> np.ndarray:
    """Strictly greater than ``threshold`` counts as positive."""
    return (np.asarray(probabilities) > threshold).astype(np.int64)


def evaluate(y_true, probabilities, threshold: float = 0.5, per_class_kappa: bool = False,
             class_names: tuple[str, ...] = CLASS_NAMES) -> MetricsReport:
    t = _as_2d(_as_binary("y_true", y_true))
    probs = _as_2d(np.asarray(probabilities, dtype=np.float64))
    if t.shape != probs.shape:
        raise ValueError(f"shape mismatch: {t.shape} vs {probs.shape}")
    pred = threshold_predictions(probs, threshold)
    counts = confusion(t, pred)
    prf = precision_recall_f1(counts)
    kappa, kdeg = cohen_kappa_detail(t, pred, per_class_kappa)

    k = t.shape[1]
    auc = np.full(k, np.nan)
    curves = {}
    for j in range(k):
        try:
            auc[j], curves[j] = roc_auc(t[:, j], probs[:, j])
        except UndefinedMetricError:
            pass
    defined = ~np.isnan(auc)
    names = class_names if len(class_names) == k else tuple(str(j) for j in range(k))
    return MetricsReport(
        threshold=threshold,
        precision=prf.precision,
        recall=prf.recall,
        f1=prf.f1,
        auc=auc,
        macro_precision=prf.macro_precision,
        macro_recall=prf.macro_recall,
        macro_f1=prf.macro_f1,
        macro_auc=float(auc[defined].mean()) if defined.any() else float("nan"),
        kappa=kappa,
        kappa_degenerate=kdeg,
        prf_degenerate=prf.degenerate,
        auc_defined=defined,
        counts=counts,
        curves=curves,
        class_names=names,
    )
