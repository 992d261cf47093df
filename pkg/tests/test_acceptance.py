"""Acceptance suite: one test per primary criterion, each printing PASS/FAIL.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
happen; they are also collected in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from dkcnet import cli
from dkcnet.attention import DkcConfig, channel_shuffle, dkc_forward, init_dkc_params, shuffle_permutation
from dkcnet.data.balance import (
    ODIR_CLASS_COUNTS,
    ODIR_OVERSAMPLE_CBF,
    ODIR_REPORTED_UNDERSAMPLED,
    ODIR_UNDERSAMPLE_CBF,
    execute_balance,
    plan_oversample,
    plan_undersample,
)
from dkcnet.data.imaging import to_chw
from dkcnet.data.pipeline import load_dataset, preprocess_manifest
from dkcnet.data.records import CLASS_NAMES, load_keyword_map
from dkcnet.data.synthetic import generate_synthetic_dataset, write_synthetic_corpus
from dkcnet.explain import grad_cam, heatmap_peak
from dkcnet.metrics import cohen_kappa, confusion, precision_recall_f1, roc_auc
from dkcnet.model import DKCNet, ModelConfig, TrainConfig, bce_loss, read_log, train
from dkcnet.oracles import pair_count_auc, scalar_confusion, scalar_kappa, scalar_prf
from dkcnet.se import SeConfig, init_se_params, se_forward
from dkcnet.tensor import Tensor
from dkcnet.verify import model_gradcheck


def test_criterion_1_gradients(record_criterion):
    t0 = time.perf_counter()
    rep = model_gradcheck("train", tolerance=1e-4)
    seconds = time.perf_counter() - t0
    worst = max(rep.per_input, key=rep.per_input.get)
    ok = rep.passed and rep.max_rel_error < 1e-4 and seconds < 60
    record_criterion(1, "gradient correctness", ok,
                     f"{len(rep.per_input)} parameter tensors, max rel err {rep.max_rel_error:.2e} "
                     f"({worst}), {seconds:.1f}s")
    assert ok


def test_criterion_2_balance_table(record_criterion):
    over = plan_oversample(ODIR_CLASS_COUNTS, ODIR_OVERSAMPLE_CBF).targets()
    got_over = [over[c] for c in CLASS_NAMES]
    want_over = [1135, 1131, 1035, 1055, 1197, 1128, 1062, 944]
    under = plan_undersample(ODIR_CLASS_COUNTS, ODIR_UNDERSAMPLE_CBF).targets()
    floor_ok = all(under[c] == ODIR_CLASS_COUNTS[c] // ODIR_UNDERSAMPLE_CBF[c] for c in CLASS_NAMES)
    # the printed undersampling column disagrees with floor division here
    known = {"N": (94, 95), "D": (102, 103), "G": (103, 104), "C": (105, 106), "M": (88, 86), "O": (94, 95)}
    deviations = {c: (under[c], ODIR_REPORTED_UNDERSAMPLED[c]) for c in CLASS_NAMES
                  if under[c] != ODIR_REPORTED_UNDERSAMPLED[c]}
    ok = got_over == want_over and floor_ok and deviations == known
    dev = ", ".join(f"{c} {a} vs {b}" for c, (a, b) in deviations.items())
    record_criterion(2, "balance table", ok, f"oversampled {got_over}; floor rule holds; known deviations: {dev}")
    assert ok


def test_criterion_3_metric_oracles(record_criterion):
    rng = np.random.default_rng(2024)
    y = rng.integers(0, 2, (100, 8))
    scores = rng.random((100, 8))
    pred = (rng.random((100, 8)) < 0.4).astype(int)
    auc_err = max(abs(roc_auc(y[:, j], scores[:, j])[0] - pair_count_auc(y[:, j], scores[:, j])) for j in range(8))
    prf = precision_recall_f1(confusion(y, pred))
    prf_err = 0.0
    for j in range(8):
        tp, fp, fn, _ = scalar_confusion(y, pred, j)
        ref = scalar_prf(tp, fp, fn)
        prf_err = max(prf_err, *(abs(a - b) for a, b in zip((prf.precision[j], prf.recall[j], prf.f1[j]), ref)))
    kappa_err = abs(cohen_kappa(y, pred) - scalar_kappa(y, pred))
    ok = auc_err <= 1e-12 and prf_err <= 1e-12 and kappa_err <= 1e-12
    record_criterion(3, "metric oracles", ok,
                     f"max |AUC diff| {auc_err:.1e}, P/R/F1 {prf_err:.1e}, kappa {kappa_err:.1e} (tol 1e-12)")
    assert ok


def test_criterion_4_shapes_and_shuffle(record_criterion):
    rng = np.random.default_rng(4)
    failures = []
    for c in (8, 16, 32):
        dcfg = DkcConfig(in_channels=c, reduction=4, dilations=[2, 3, 4])
        dparams = init_dkc_params(dcfg, rng)
        sparams = init_se_params(SeConfig(c, 4), rng)
        for hw in (7, 14):
            x = Tensor(rng.normal(size=(2, c, hw, hw)))
            if dkc_forward(x, dcfg, dparams, np.random.default_rng(0), "train").shape != x.shape:
                failures.append(f"dkc C={c} hw={hw}")
            if dkc_forward(x, dcfg, dparams, mode="eval").shape != x.shape:
                failures.append(f"dkc eval C={c} hw={hw}")
            if se_forward(x, sparams).shape != x.shape:
                failures.append(f"se C={c} hw={hw}")
        for g in (2, 4):
            perm = shuffle_permutation(c, g)
            if sorted(perm.tolist()) != list(range(c)):
                failures.append(f"shuffle C={c} g={g} not a bijection")
            x = Tensor(rng.normal(size=(1, c, 2, 2)))
            if not np.array_equal(channel_shuffle(channel_shuffle(x, g), c // g).data, x.data):
                failures.append(f"shuffle C={c} g={g} inverse")
    ok = not failures
    record_criterion(4, "shape and shuffle invariants", ok,
                     "C in {8,16,32}, dilations (2,3,4), h=w in {7,14}, groups {2,4}: "
                     + ("all preserved" if ok else "; ".join(failures)))
    assert ok


def test_criterion_5_bce(record_criterion):
    ln2 = bce_loss(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]])).data.item()
    rng = np.random.default_rng(5)
    worst = math.inf
    for _ in range(1000):
        shape = (int(rng.integers(1, 5)), 8)
        y = (rng.random(shape) > 0.5).astype(float)
        p = rng.random(shape)
        worst = min(worst, bce_loss(y, p).data.item())
    ok = abs(ln2 - math.log(2)) <= 1e-12 and worst >= 0.0
    record_criterion(5, "BCE spot values", ok, f"|L - ln2| = {abs(ln2 - math.log(2)):.1e}; "
                                               f"min over 1000 random cases {worst:.3e}")
    assert ok


# Toy run settings: the documented optimizer (plain SGD, time decay 1e-6,
# batch 16) with the learning rate at the permitted ceiling of 0.01.
OVERFIT_MODEL = {"input_size": 32, "backbone": {"stages": [[64, 2], [256, 2]]},
                 "dkc": {"reduction": 4}, "se": {"reduction": 4}}


def overfit_config(epochs):
    return TrainConfig(lr=0.01, decay=1e-6, momentum=0.0, batch_size=16, epochs=epochs,
                       val_split=0.0, seed=0, target_loss=0.05)


def test_criterion_6_overfit(record_criterion):
    ds = generate_synthetic_dataset(4, seed=0, size=32)
    x, y = to_chw(ds.images), ds.labels.astype(float)
    mc = ModelConfig.from_dict(OVERFIT_MODEL)
    t0 = time.perf_counter()
    long_run = train(x, y, mc, overfit_config(500)).losses
    seconds = time.perf_counter() - t0
    rerun = train(x, y, mc, overfit_config(5)).losses
    bitwise = [np.float64(a).tobytes() for a in rerun] == [np.float64(a).tobytes() for a in long_run[:5]]
    final = long_run[-1]
    converged = final < 0.05
    ok = converged and bitwise and seconds < 900
    record_criterion(6, "training sanity", ok,
                     f"{len(x)} images, {len(long_run)} epochs, final train loss {final:.4f} "
                     f"(target < 0.05, start {long_run[0]:.4f}), same-seed curves bitwise "
                     f"{'identical' if bitwise else 'DIFFERENT'}, {seconds:.0f}s")
    assert bitwise, "same-seed loss curves differ"
    assert converged, f"train loss {final:.4f} did not fall below 0.05 in 500 epochs"


def test_criterion_7_ablation(record_criterion, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("model:\n  input_size: 32\n  backbone: {stages: [[16, 2], [32, 2]]}\n"
                   "  dkc: {reduction: 4}\n  se: {reduction: 4}\n"
                   "train: {lr: 0.01, epochs: 20, batch_size: 16, val_split: 0.25}\n")
    assert cli.main(["synth", "--out-dir", str(tmp_path / "raw"), "--n-per-class", "4", "--size", "48"]) == 0
    assert cli.main(["preprocess", "--config", str(cfg), "--manifest", str(tmp_path / "raw" / "manifest.csv"),
                     "--out-dir", str(tmp_path / "pre")]) == 0
    code = cli.main(["train", "--config", str(cfg), "--manifest", str(tmp_path / "pre" / "processed.csv"),
                     "--mode", "both", "--out-dir", str(tmp_path / "run")])
    back = read_log(tmp_path / "run" / "backbone" / "train_log.csv")
    att = read_log(tmp_path / "run" / "attention" / "train_log.csv")
    rows = (tmp_path / "run" / "comparison.csv").read_text().splitlines()
    best = {r.split(",")[0]: float(r.split(",")[3]) for r in rows[1:]}
    ok = code == 0 and len(back) == len(att) == 20 and set(best) == {"backbone", "attention"}
    delta = best.get("attention", math.nan) - best.get("backbone", math.nan)
    record_criterion(7, "ablation structure", ok,
                     f"both modes ran {len(back)}/{len(att)} epochs; best val AUC backbone "
                     f"{best.get('backbone', math.nan):.3f}, attention {best.get('attention', math.nan):.3f} "
                     f"(delta {delta:+.3f}, reported only)")
    assert ok


# Grad-CAM needs a model that actually classifies the motifs; plain SGD at
# toy scale does not get there (criterion 6), so this run uses momentum.
CAM_MODEL = {"input_size": 64, "backbone": {"stages": [[16, 2], [32, 2]]},
             "dkc": {"reduction": 4}, "se": {"reduction": 4}}


@pytest.fixture(scope="module")
def cam_model():
    ds = generate_synthetic_dataset(4, seed=0, size=64)
    tc = TrainConfig(lr=0.05, decay=1e-6, momentum=0.9, batch_size=16, epochs=200, val_split=0.0,
                     seed=0, target_loss=0.02)
    return train(to_chw(ds.images), ds.labels.astype(float), ModelConfig.from_dict(CAM_MODEL), tc).model


def test_criterion_8_grad_cam(record_criterion, cam_model):
    held = generate_synthetic_dataset(4, seed=1, size=64)
    x = to_chw(held.images)
    probs = cam_model.predict_proba(x)
    correct = [i for i in range(len(x)) if np.array_equal((probs[i] > 0.5).astype(int), held.labels[i])]
    in_range = scale_ok = True
    hits = 0
    for i in correct:
        cls = int(np.flatnonzero(held.labels[i])[0])
        hm = grad_cam(cam_model, x[i], cls, "se_out")
        in_range &= bool(hm.grid.min() >= 0.0 and hm.grid.max() <= 1.0)
        scaled = grad_cam(cam_model, x[i], cls, "se_out", logit_scale=3.0)
        scale_ok &= bool(np.allclose(hm.grid, scaled.grid, rtol=0, atol=1e-12))
        r, c = heatmap_peak(hm)
        top, bottom, left, right = held.boxes[i][cls]
        hits += top <= r <= bottom and left <= c <= right
    rate = hits / len(correct) if correct else 0.0
    ok = bool(correct) and in_range and scale_ok and rate >= 0.8
    record_criterion(8, "Grad-CAM", ok,
                     f"maps in [0,1]: {in_range}; scale invariant: {scale_ok}; peak in motif box "
                     f"{hits}/{len(correct)} = {rate:.0%} of correctly classified held-out images (need >= 80%)")
    assert ok


def test_criterion_9_determinism(record_criterion, tmp_path):
    # checkpoint round trip
    model = DKCNet(ModelConfig.from_dict(CAM_MODEL), seed=9)
    x = np.random.default_rng(9).random((4, 3, 64, 64))
    model.forward(x, np.random.default_rng(10), "train")
    model.save(tmp_path / "m.npz")
    loaded = DKCNet.load(tmp_path / "m.npz")
    ckpt_ok = model.predict_proba(x).tobytes() == loaded.predict_proba(x).tobytes()

    # preprocess twice from the same raw corpus
    kmap = load_keyword_map()
    manifest = write_synthetic_corpus(tmp_path / "raw", 2, seed=3, size=32, artifacts=2)
    first, summary = preprocess_manifest(manifest, tmp_path / "a", kmap, size=32)
    second, _ = preprocess_manifest(manifest, tmp_path / "b", kmap, size=32)
    pre_ok = first.read_bytes() == second.read_bytes() \
        and load_dataset(first)[0].tobytes() == load_dataset(second)[0].tobytes()

    # balance twice, and once more from shuffled input order
    counts = {c: 2 for c in CLASS_NAMES}
    plan = plan_oversample(counts, {"G": 5, "H": 12, "A": 7})
    recs = summary.kept
    a = execute_balance(recs, plan, seed=11)
    b = execute_balance(recs, plan, seed=11)
    c = execute_balance(list(reversed(recs)), plan, seed=11)
    bal_ok = a == b == c
    under = plan_undersample({c: 2 for c in CLASS_NAMES}, {c: 2 for c in CLASS_NAMES})
    bal_ok &= execute_balance(recs, under, seed=4) == execute_balance(recs[::-1], under, seed=4)

    ok = ckpt_ok and pre_ok and bal_ok
    record_criterion(9, "determinism and round trip", ok,
                     f"checkpoint eval bitwise equal: {ckpt_ok}; preprocess repeat identical: {pre_ok}; "
                     f"balance repeat and order-free: {bal_ok}")
    assert ok
