"""Slow reference computations used to cross-check the fast paths.

These are deliberately written as plain loops over scalars and share no
code with the implementations they check.
"""

from __future__ import annotations

import math

import numpy as np


def naive_conv2d(x, kernel, bias=None, dilation=1, stride=1, pad=(0, 0, 0, 0)):
    """Direct six-loop cross-correlation; ``pad`` is (top, bottom, left, right)."""
    n, c, h, w = x.shape
    co, ci, kh, kw = kernel.shape
    top, bottom, left, right = pad
    hp, wp = h + top + bottom, w + left + right
    oh = (hp - (kh - 1) * dilation - 1) // stride + 1
    ow = (wp - (kw - 1) * dilation - 1) // stride + 1
    out = np.zeros((n, co, oh, ow))
    for b in range(n):
        for o in range(co):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0 if bias is None else float(bias[o])
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                r = i * stride + u * dilation - top
                                s = j * stride + v * dilation - left
                                if 0 <= r < h and 0 <= s < w:
                                    acc += x[b, ch, r, s] * kernel[o, ch, u, v]
                    out[b, o, i, j] = acc
    return out


def pair_count_auc(y, scores) -> float:
    """P(score+ > score-) + 0.5 * P(score+ == score-) over all pairs."""
    pos = [s for s, t in zip(scores, y) if t == 1]
    neg = [s for s, t in zip(scores, y) if t == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def scalar_confusion(y_true, y_pred, j):
    tp = fp = fn = tn = 0
    for t_row, p_row in zip(y_true, y_pred):
        t, p = int(t_row[j]), int(p_row[j])
        if t and p:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def scalar_prf(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def scalar_kappa(y_true, y_pred) -> float:
    """Kappa over all flattened slots via an explicit 2x2 contingency table."""
    table = [[0, 0], [0, 0]]
    for t_row, p_row in zip(y_true, y_pred):
        for t, p in zip(np.ravel(t_row), np.ravel(p_row)):
            table[int(t)][int(p)] += 1
    total = sum(map(sum, table))
    po = (table[0][0] + table[1][1]) / total
    pe = sum(
        (sum(table[v]) / total) * ((table[0][v] + table[1][v]) / total) for v in (0, 1)
    )
    return 0.0 if pe == 1 else (po - pe) / (1 - pe)


def scalar_bce(y, p, eps=1e-12) -> float:
    total = 0.0
    count = 0
    for t, q in zip(np.ravel(y), np.ravel(p)):
        q = min(max(float(q), eps), 1 - eps)
        total += t * math.log(q) + (1 - t) * math.log(1 - q)
        count += 1
    return -total / count
