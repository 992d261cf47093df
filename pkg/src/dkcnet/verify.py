"""Self-check suite run by ``dkcnet verify``.

Each check is small enough to run on a laptop in seconds; together they
cover gradients, convolution geometry, block shapes, metric formulas,
balancing arithmetic, the loss and checkpoint round-trips.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import oracles
from .attention import DkcConfig, channel_shuffle, dkc_forward, init_dkc_params, shuffle_permutation
from .data.balance import (
    ODIR_CLASS_COUNTS,
    ODIR_OVERSAMPLE_CBF,
    ODIR_REPORTED_OVERSAMPLED,
    ODIR_UNDERSAMPLE_CBF,
    plan_oversample,
    plan_undersample,
)
from .metrics import confusion, cohen_kappa, precision_recall_f1, roc_auc
from .model import DKCNet, ModelConfig, bce_loss
from .se import SeConfig, init_se_params, se_forward
from .tensor import Tensor, conv2d_dilated, conv_output_geometry, finite_diff_check


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail} ({self.seconds:.1f}s)"


TINY_MODEL = {
    "input_size": 16,
    "backbone": {"stages": [[8, 1], [8, 2]]},
    "dkc": {"reduction": 2},
    "se": {"reduction": 2},
}


def tiny_model(seed: int = 3) -> DKCNet:
    return DKCNet(ModelConfig.from_dict(TINY_MODEL), seed=seed)


def model_gradcheck(mode: str = "train", seed: int = 0, tolerance: float = 1e-4):
    """Finite-difference check of every parameter of the tiny model under BCE."""
    model = tiny_model()
    rng = np.random.default_rng(seed)
    x = rng.random((4, 3, 16, 16))
    y = (rng.random((4, 8)) > 0.5).astype(np.float64)
    if mode == "eval":
        model.forward(x, np.random.default_rng(seed + 1), "train")

    def loss():
        # a fresh generator per call keeps the dropout masks fixed
        return bce_loss(y, model.forward(x, np.random.default_rng(seed + 2), mode).probabilities)

    return finite_diff_check(loss, model.params, step=1e-5, tolerance=tolerance)


def check_gradients() -> CheckResult:
    # train mode: the loss that SGD actually differentiates (batch stats, dropout)
    rep = model_gradcheck("train")
    worst = max(rep.per_input, key=rep.per_input.get)
    return CheckResult("gradients", rep.passed,
                       f"max rel err {rep.max_rel_error:.2e} at {worst}, {len(rep.per_input)} tensors (tol 1e-4)")


def check_convolution() -> CheckResult:
    rng = np.random.default_rng(1)
    worst = 0.0
    for dilation, stride, k in ((1, 1, 3), (2, 1, 2), (3, 2, 2), (4, 1, 2), (1, 2, 3)):
        x = rng.normal(size=(2, 3, 9, 10))
        w = rng.normal(size=(4, 3, k, k))
        b = rng.normal(size=4)
        fast = conv2d_dilated(Tensor(x), Tensor(w), Tensor(b), dilation=dilation, stride=stride).data
        oh, ow, pads = conv_output_geometry(9, 10, k, k, stride, dilation, "same")
        slow = oracles.naive_conv2d(x, w, b, dilation, stride, pads)
        if fast.shape != slow.shape or fast.shape[2:] != (oh, ow):
            return CheckResult("convolution", False, f"shape {fast.shape} != {slow.shape}")
        worst = max(worst, float(np.max(np.abs(fast - slow))))
    return CheckResult("convolution", worst < 1e-12, f"max abs diff vs direct loops {worst:.1e}")


def check_block_shapes() -> CheckResult:
    rng = np.random.default_rng(2)
    for c in (8, 16, 32):
        cfg = DkcConfig(in_channels=c, reduction=4)
        x = Tensor(rng.normal(size=(2, c, 7, 7)))
        out = dkc_forward(x, cfg, init_dkc_params(cfg, rng), rng, "train")
        se = se_forward(out, init_se_params(SeConfig(c, reduction=4), rng))
        if out.shape != x.shape or se.shape != x.shape:
            return CheckResult("block shapes", False, f"C={c}: {x.shape} -> {out.shape} -> {se.shape}")
    return CheckResult("block shapes", True, "attention and SE preserve (n, C, h, w) for C in 8, 16, 32")


def check_shuffle() -> CheckResult:
    for c, g in ((6, 2), (8, 2), (12, 3), (16, 4), (32, 2)):
        perm = shuffle_permutation(c, g)
        if sorted(perm.tolist()) != list(range(c)):
            return CheckResult("channel shuffle", False, f"C={c}, g={g} is not a permutation")
        x = Tensor(np.arange(c, dtype=float).reshape(1, c, 1, 1))
        back = channel_shuffle(channel_shuffle(x, g), c // g)
        if not np.array_equal(back.data, x.data):
            return CheckResult("channel shuffle", False, f"C={c}, g={g}: inverse shuffle is not identity")
    ok = shuffle_permutation(6, 2).tolist() == [0, 3, 1, 4, 2, 5]
    return CheckResult("channel shuffle", ok, "bijective; g then C/g groups restores order")


def check_metrics(n: int = 100, classes: int = 8, seed: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    y = (rng.random((n, classes)) < 0.3).astype(int)
    y[0], y[1] = 1, 0  # every class has both outcomes
    scores = np.round(rng.random((n, classes)), 2)  # rounding forces ties
    pred = (scores > 0.5).astype(int)
    worst = 0.0
    for j in range(classes):
        auc, _ = roc_auc(y[:, j], scores[:, j])
        worst = max(worst, abs(auc - oracles.pair_count_auc(y[:, j], scores[:, j])))
    prf = precision_recall_f1(confusion(y, pred))
    for j in range(classes):
        ref = oracles.scalar_prf(*oracles.scalar_confusion(y, pred, j)[:3])
        got = (prf.precision[j], prf.recall[j], prf.f1[j])
        worst = max(worst, max(abs(a - b) for a, b in zip(got, ref)))
    worst = max(worst, abs(cohen_kappa(y, pred) - oracles.scalar_kappa(y, pred)))
    return CheckResult("metrics", worst <= 1e-12, f"max diff vs scalar recomputation {worst:.1e}")


def check_balance_table() -> CheckResult:
    over = plan_oversample(ODIR_CLASS_COUNTS, ODIR_OVERSAMPLE_CBF).targets()
    under = plan_undersample(ODIR_CLASS_COUNTS, ODIR_UNDERSAMPLE_CBF).targets()
    floors = {c: ODIR_CLASS_COUNTS[c] // k for c, k in ODIR_UNDERSAMPLE_CBF.items()}
    ok = over == ODIR_REPORTED_OVERSAMPLED and under == floors
    return CheckResult("balancing", ok, f"oversampled {list(over.values())}")


def check_loss() -> CheckResult:
    got = bce_loss(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]])).data.item()
    rng = np.random.default_rng(5)
    y = (rng.random((6, 8)) > 0.5).astype(float)
    p = rng.random((6, 8))
    diff = abs(bce_loss(y, p).data.item() - oracles.scalar_bce(y, p))
    ok = abs(got - math.log(2)) < 1e-12 and diff < 1e-12
    return CheckResult("loss", ok, f"BCE(0.5) - ln 2 = {got - math.log(2):.1e}; scalar diff {diff:.1e}")


def check_checkpoint() -> CheckResult:
    model = tiny_model(seed=11)
    x = np.random.default_rng(6).random((3, 3, 16, 16))
    model.forward(x, np.random.default_rng(0), "train")  # populate running stats
    before = model.predict_proba(x)
    with tempfile.TemporaryDirectory() as tmp:
        path = model.save(Path(tmp) / "ckpt.npz")
        after = DKCNet.load(path).predict_proba(x)
    same = before.tobytes() == after.tobytes()
    return CheckResult("checkpoint", same, "save -> load -> eval is bitwise identical" if same else "outputs differ")


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "gradients": check_gradients,
    "convolution": check_convolution,
    "block-shapes": check_block_shapes,
    "shuffle": check_shuffle,
    "metrics": check_metrics,
    "balancing": check_balance_table,
    "loss": check_loss,
    "checkpoint": check_checkpoint,
}


def run_checks(names=None) -> list[CheckResult]:
    """Run the named checks (all by default); an exception counts as a failure."""
    results = []
    for name in names or CHECKS:
        if name not in CHECKS:
            raise KeyError(f"unknown check {name!r}; choose from {sorted(CHECKS)}")
        t0 = time.perf_counter()
        try:
            res = CHECKS[name]()
        except Exception as exc:  # a crash is a failed check, not a crashed suite
            res = CheckResult(name, False, f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results
