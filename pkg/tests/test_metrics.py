import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dkcnet.metrics import (
    UndefinedMetricError,
    cohen_kappa,
    cohen_kappa_detail,
    confusion,
    evaluate,
    precision_recall_f1,
    roc_auc,
    roc_curve,
)
from dkcnet.oracles import pair_count_auc, scalar_confusion, scalar_kappa, scalar_prf

seeds = st.integers(0, 2**31 - 1)


def random_pair(seed, n=40, k=8):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, (n, k)), rng.integers(0, 2, (n, k))


# -- confusion ------------------------------------------------------------------

def test_confusion_identity_and_complement():
    t, _ = random_pair(0)
    c = confusion(t, t)
    assert np.all(c.fp == 0) and np.all(c.fn == 0)
    c = confusion(t, 1 - t)
    assert np.all(c.tp == 0) and np.all(c.tn == 0)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_confusion_matches_loop(seed):
    t, p = random_pair(seed)
    c = confusion(t, p)
    for j in range(8):
        assert (c.tp[j], c.fp[j], c.fn[j], c.tn[j]) == scalar_confusion(t, p, j)
    assert np.all(c.total == 40)


def test_confusion_rejects_bad_input():
    with pytest.raises(ValueError):
        confusion([[0, 2]], [[0, 1]])
    with pytest.raises(ValueError):
        confusion(np.zeros((3, 8), int), np.zeros((3, 7), int))


# -- precision / recall / F1 -----------------------------------------------------------

def counts_from(tp, fp, fn, tn=0):
    t = [1] * tp + [0] * fp + [1] * fn + [0] * tn
    p = [1] * tp + [1] * fp + [0] * fn + [0] * tn
    return confusion(t, p)


def test_prf_hand_case():
    prf = precision_recall_f1(counts_from(2, 1, 1))
    for v in (prf.precision[0], prf.recall[0], prf.f1[0]):
        assert v == pytest.approx(2 / 3, abs=1e-15)
    assert not prf.degenerate[0]


def test_prf_zero_denominator_flagged():
    prf = precision_recall_f1(counts_from(0, 0, 3, 2))
    assert prf.precision[0] == 0.0 and prf.recall[0] == 0.0 and prf.f1[0] == 0.0
    assert prf.degenerate[0]


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_prf_matches_scalar_and_bounds(seed):
    t, p = random_pair(seed, n=30)
    prf = precision_recall_f1(confusion(t, p))
    c = confusion(t, p)
    for j in range(8):
        ref = scalar_prf(int(c.tp[j]), int(c.fp[j]), int(c.fn[j]))
        np.testing.assert_allclose([prf.precision[j], prf.recall[j], prf.f1[j]], ref, rtol=0, atol=1e-12)
        lo, hi = sorted((prf.precision[j], prf.recall[j]))
        if not prf.degenerate[j]:
            assert lo - 1e-15 <= prf.f1[j] <= hi + 1e-15
    assert prf.macro_f1 == pytest.approx(float(np.mean(prf.f1)), abs=1e-12)
    assert prf.macro_precision == pytest.approx(float(np.mean(prf.precision)), abs=1e-12)


def test_f1_equals_p_when_p_equals_r():
    prf = precision_recall_f1(counts_from(5, 3, 3, 4))
    assert prf.f1[0] == pytest.approx(prf.precision[0], abs=1e-15)


# -- kappa ------------------------------------------------------------------------

def test_kappa_contingency_table():
    t = [1] * 20 + [1] * 5 + [0] * 10 + [0] * 15
    p = [1] * 20 + [0] * 5 + [1] * 10 + [0] * 15
    assert cohen_kappa(t, p) == pytest.approx(0.4, abs=1e-12)


def test_kappa_perfect_and_degenerate():
    t, _ = random_pair(1)
    assert cohen_kappa(t, t) == 1.0
    k, flag = cohen_kappa_detail(np.ones((4, 8), int), np.ones((4, 8), int))
    assert k == 0.0 and flag


def test_kappa_independent_predictions_near_zero():
    rng = np.random.default_rng(2)
    t = (rng.random((20000, 8)) < 0.3).astype(int)
    p = (rng.random((20000, 8)) < 0.3).astype(int)
    assert abs(cohen_kappa(t, p)) < 0.02


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_kappa_matches_oracle_and_is_symmetric(seed):
    t, p = random_pair(seed)
    k = cohen_kappa(t, p)
    assert k == pytest.approx(scalar_kappa(t, p), abs=1e-12)
    assert k == pytest.approx(cohen_kappa(p, t), abs=1e-15)
    assert -1.0 <= k <= 1.0


def test_kappa_per_class_mode():
    t, p = random_pair(3)
    ref = np.mean([scalar_kappa(t[:, [j]], p[:, [j]]) for j in range(8)])
    assert cohen_kappa(t, p, per_class=True) == pytest.approx(ref, abs=1e-12)


# -- ROC ---------------------------------------------------------------------------

def test_auc_trivial_cases():
    y = np.array([0, 0, 1, 1, 0, 1])
    s = np.array([0.1, 0.2, 0.8, 0.9, 0.3, 0.7])
    assert roc_auc(y, s)[0] == 1.0
    assert roc_auc(y, -s)[0] == 0.0
    assert roc_auc(y, np.full(6, 0.4))[0] == 0.5


def test_auc_single_class_undefined():
    with pytest.raises(UndefinedMetricError):
        roc_auc([1, 1, 1], [0.2, 0.3, 0.4])


def test_auc_matches_pair_counting_n50():
    rng = np.random.default_rng(4)
    y = rng.integers(0, 2, 50)
    s = rng.random(50)
    assert roc_auc(y, s)[0] == pytest.approx(pair_count_auc(y, s), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_auc_with_ties_matches_pair_counting(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 60))
    y = rng.integers(0, 2, n)
    y[0], y[1] = 0, 1
    s = rng.integers(0, 6, n) / 5.0  # many ties
    auc, curve = roc_auc(y, s)
    assert auc == pytest.approx(pair_count_auc(y, s), abs=1e-12)
    assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0)
    assert (curve.fpr[0], curve.tpr[0]) == (0.0, 0.0)
    assert (curve.fpr[-1], curve.tpr[-1]) == (1.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_auc_reversal_and_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, 30)
    y[:2] = [0, 1]
    s = rng.normal(size=30)  # tie-free with probability 1
    auc = roc_auc(y, s)[0]
    assert auc + roc_auc(y, -s)[0] == pytest.approx(1.0, abs=1e-12)
    assert roc_auc(y, np.exp(3 * s) + 7)[0] == pytest.approx(auc, abs=1e-12)


def test_roc_curve_thresholds():
    curve = roc_curve([0, 1, 1, 0], [0.1, 0.9, 0.4, 0.4])
    assert np.isinf(curve.thresholds[0])
    assert curve.thresholds[1:].tolist() == [0.9, 0.4, 0.1]
    assert curve.tpr.tolist() == [0.0, 0.5, 1.0, 1.0]
    assert curve.fpr.tolist() == [0.0, 0.0, 0.5, 1.0]


# -- evaluate -------------------------------------------------------------------------

def test_evaluate_perfect():
    t, _ = random_pair(5)
    rep = evaluate(t, t.astype(float))
    assert rep.macro_f1 == 1.0 and rep.kappa == 1.0
    assert np.all(rep.auc == 1.0) and rep.macro_auc == 1.0


def test_evaluate_half_probabilities_are_negative():
    t, _ = random_pair(6)
    rep = evaluate(t, np.full(t.shape, 0.5))
    assert np.all(rep.recall == 0.0)
    assert np.all(rep.counts.tp == 0) and np.all(rep.counts.fp == 0)


def test_evaluate_undefined_auc_excluded():
    t, _ = random_pair(7, n=20)
    t[:, 2] = 0
    probs = np.random.default_rng(8).random(t.shape)
    rep = evaluate(t, probs)
    assert not rep.auc_defined[2] and np.isnan(rep.auc[2])
    assert "G.auc: undefined" in rep.to_lines()
    assert rep.macro_auc == pytest.approx(np.mean(rep.auc[rep.auc_defined]), abs=1e-12)


def test_evaluate_random_matches_recomputation():
    rng = np.random.default_rng(9)
    t = rng.integers(0, 2, (60, 8))
    probs = rng.random((60, 8))
    rep = evaluate(t, probs)
    pred = (probs > 0.5).astype(int)
    for j in range(8):
        tp, fp, fn, _ = scalar_confusion(t, pred, j)
        assert (rep.precision[j], rep.recall[j], rep.f1[j]) == pytest.approx(scalar_prf(tp, fp, fn), abs=1e-12)
        assert rep.auc[j] == pytest.approx(pair_count_auc(t[:, j], probs[:, j]), abs=1e-12)
    assert rep.kappa == pytest.approx(scalar_kappa(t, pred), abs=1e-12)
    assert rep.macro_f1 == pytest.approx(np.mean(rep.f1), abs=1e-12)
    assert rep.macro_auc == pytest.approx(np.mean(rep.auc), abs=1e-12)


def test_report_files(tmp_path):
    rng = np.random.default_rng(10)
    t = rng.integers(0, 2, (30, 8))
    rep = evaluate(t, rng.random((30, 8)))
    text = rep.write(tmp_path / "m.txt").read_text()
    assert "macro_auc:" in text and "kappa_degenerate: false" in text
    paths = rep.write_roc_csvs(tmp_path)
    assert len(paths) == 8
    rows = paths[0].read_text().splitlines()
    assert rows[0] == "fpr,tpr,threshold" and rows[1].startswith("0.0,0.0,inf")
