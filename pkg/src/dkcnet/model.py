"""DKCNet assembly, BCE loss, SGD and the training loop.

Forward path (``attention=True``)::

    images -> backbone stages (conv3x3 / BN / ReLU) -> DKC block
           -> dropout(0.3) -> SE block -> GAP -> FC -> sigmoid

With ``attention=False`` the DKC, dropout and SE stages are skipped, which
gives the backbone-only baseline used for ablations.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import metrics
from .attention import ConfigError, DkcConfig, DkcParams, dkc_forward, init_dkc_params
from .checkpoint import load_checkpoint, save_checkpoint
from .se import SeConfig, SeParams, init_se_params, se_forward
from .tensor import (
    BatchNormStats,
    DimensionError,
    StateError,
    Tensor,
    backward,
    batch_norm,
    conv2d_dilated,
    conv_output_geometry,
    dropout,
    fully_connected,
    global_avg_pool,
    make_node,
    relu,
    sigmoid,
    zero_grads,
)

logger = logging.getLogger(__name__)

NUM_CLASSES = 8
BCE_EPS = 1e-12
LOG_FIELDS = ("epoch", "train_loss", "val_auc", "val_f1", "val_kappa")


@dataclass
class BackboneConfig:
    """Stand-in for an ImageNet backbone: a stack of conv3x3/BN/ReLU stages."""

    stages: list[tuple[int, int]] = field(
        default_factory=lambda: [(16, 2), (32, 2), (32, 2), (32, 2), (32, 2)]
    )
    kernel_size: int = 3

    def output_size(self, size: int) -> int:
        for _, stride in self.stages:
            size = -(-size // stride)
        return size

    @property
    def out_channels(self) -> int:
        return self.stages[-1][0]


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    dkc: DkcConfig | None = None
    se: SeConfig | None = None
    attention: bool = True
    head_dropout: float = 0.3
    num_classes: int = NUM_CLASSES
    input_size: int = 224
    in_channels: int = 3

    def __post_init__(self):
        c = self.backbone.out_channels if self.backbone.stages else 0
        if self.dkc is None:
            self.dkc = DkcConfig(in_channels=c)
        if self.se is None:
            self.se = SeConfig(channels=c)

    def validate(self) -> None:
        if not self.backbone.stages:
            raise ConfigError("backbone needs at least one stage")
        for ch, stride in self.backbone.stages:
            if ch < 1 or stride < 1:
                raise ConfigError(f"bad backbone stage ({ch}, {stride})")
        if self.backbone.output_size(224) < 4:
            raise ConfigError("backbone must leave at least a 4x4 feature map for a 224 input")
        if self.backbone.output_size(self.input_size) < 1:
            raise ConfigError("backbone downsamples the input to nothing")
        if not 0.0 <= self.head_dropout < 1.0:
            raise ConfigError("head_dropout must be in [0, 1)")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        c = self.backbone.out_channels
        if self.attention:
            if self.dkc.in_channels != c:
                raise ConfigError(f"DKC block expects {self.dkc.in_channels} channels, backbone gives {c}")
            if self.se.channels != c:
                raise ConfigError(f"SE block expects {self.se.channels} channels, backbone gives {c}")
            self.dkc.validate()
            self.se.validate()

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["backbone"]["stages"] = [list(s) for s in self.backbone.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        d = copy.deepcopy(d)
        bb = d.pop("backbone", {}) or {}
        if "stages" in bb:
            bb["stages"] = [tuple(int(v) for v in s) for s in bb["stages"]]
        backbone = BackboneConfig(**bb)
        c = backbone.out_channels
        dkc = d.pop("dkc", None) or {}
        dkc.setdefault("in_channels", c)
        se = d.pop("se", None) or {}
        se.setdefault("channels", c)
        return cls(backbone=backbone, dkc=DkcConfig(**dkc), se=SeConfig(**se), **d)


@dataclass
class TrainConfig:
    lr: float = 0.0005
    decay: float = 1e-6
    decay_mode: str = "time"  # "time": lr / (1 + decay * t); "weight": L2 weight decay
    momentum: float = 0.0
    batch_size: int = 16
    epochs: int = 100
    val_split: float = 0.2
    seed: int = 0
    threshold: float = 0.5
    target_loss: float | None = None  # stop once the epoch train loss falls below this

    def validate(self) -> None:
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0.0 <= self.val_split < 1.0:
            raise ConfigError("val_split must be in [0, 1)")
        if self.decay_mode not in ("time", "weight"):
            raise ConfigError(f"unknown decay_mode {self.decay_mode!r}")


@dataclass
class Prediction:
    probabilities: np.ndarray
    decisions: np.ndarray
    threshold: float = 0.5


@dataclass
class ForwardResult:
    logits: Tensor  # (n, classes, 1, 1)
    probabilities: Tensor
    features: dict[str, Tensor]


class DKCNet:
    """Parameters, BN statistics and forward pass of one model instance."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        self.bn_stats: dict[str, BatchNormStats] = {}

        in_c = config.in_channels
        k = config.backbone.kernel_size
        for i, (out_c, _) in enumerate(config.backbone.stages):
            std = np.sqrt(2.0 / (in_c * k * k))
            self.params[f"backbone.{i}.kernel"] = Tensor(rng.normal(0.0, std, (out_c, in_c, k, k)), requires_grad=True)
            self.params[f"backbone.{i}.bn.gamma"] = Tensor(np.ones(out_c), requires_grad=True)
            self.params[f"backbone.{i}.bn.beta"] = Tensor(np.zeros(out_c), requires_grad=True)
            self.bn_stats[f"backbone.{i}.bn"] = BatchNormStats.zeros(out_c)
            in_c = out_c

        self.dkc: DkcParams | None = None
        self.se: SeParams | None = None
        if config.attention:
            self.dkc = init_dkc_params(config.dkc, rng)
            self.se = init_se_params(config.se, rng)
            self.params.update(self.dkc.named("dkc"))
            self.bn_stats.update(self.dkc.named_stats("dkc"))
            self.params.update(self.se.named("se"))

        c = config.backbone.out_channels
        self.params["head.weight"] = Tensor(rng.normal(0.0, np.sqrt(1.0 / c), (config.num_classes, c)), requires_grad=True)
        self.params["head.bias"] = Tensor(np.zeros(config.num_classes), requires_grad=True)

    def trainable(self) -> list[Tensor]:
        return list(self.params.values())

    def backbone(self, x: Tensor, mode: str) -> Tensor:
        for i, (_, stride) in enumerate(self.config.backbone.stages):
            x = conv2d_dilated(x, self.params[f"backbone.{i}.kernel"], stride=stride, padding="same")
            x = batch_norm(
                x,
                self.params[f"backbone.{i}.bn.gamma"],
                self.params[f"backbone.{i}.bn.beta"],
                self.bn_stats[f"backbone.{i}.bn"],
                mode,
            )
            x = relu(x)
        return x

    def forward(self, images, rng: np.random.Generator | None = None, mode: str = "eval") -> ForwardResult:
        """Run the network on (n, 3, H, W) images in [0, 1].

        Train mode uses batch statistics and dropout (``rng`` required);
        eval mode is deterministic.
        """
        cfg = self.config
        x = images if isinstance(images, Tensor) else Tensor(images)
        if x.data.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise DimensionError(f"expected (n, {cfg.in_channels}, H, W) images, got {x.shape}")
        if x.shape[2:] != (cfg.input_size, cfg.input_size):
            raise DimensionError(
                f"expected {cfg.input_size}x{cfg.input_size} images, got {x.shape[2]}x{x.shape[3]}"
            )
        features = {}
        f = self.backbone(x, mode)
        features["backbone_out"] = f
        if cfg.attention:
            f = dkc_forward(f, cfg.dkc, self.dkc, rng, mode)
            features["attention_out"] = f
            f = dropout(f, cfg.head_dropout, rng, mode)
            f = se_forward(f, self.se)
            features["se_out"] = f
        logits = fully_connected(global_avg_pool(f), self.params["head.weight"], self.params["head.bias"])
        return ForwardResult(logits, sigmoid(logits), features)

    def predict_proba(self, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
        out = []
        for start in range(0, len(images), batch_size):
            res = self.forward(images[start:start + batch_size], mode="eval")
            out.append(res.probabilities.data.reshape(res.probabilities.shape[0], -1))
        return np.concatenate(out, axis=0)

    # -- state -----------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        state = {name: t.data.copy() for name, t in self.params.items()}
        for name, s in self.bn_stats.items():
            state[f"{name}.running_mean"] = s.mean.copy()
            state[f"{name}.running_var"] = s.var.copy()
            state[f"{name}.count"] = np.array([s.count], dtype=np.int64)
        return state

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        expected = set(self.state_arrays())
        missing = expected - set(state)
        extra = set(state) - expected
        if missing or extra:
            raise StateError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, t in self.params.items():
            if state[name].shape != t.shape:
                raise DimensionError(f"{name}: checkpoint shape {state[name].shape} != {t.shape}")
            t.data = np.array(state[name], dtype=np.float64)
        for name, s in self.bn_stats.items():
            s.mean = np.array(state[f"{name}.running_mean"], dtype=np.float64)
            s.var = np.array(state[f"{name}.running_var"], dtype=np.float64)
            s.count = int(state[f"{name}.count"][0])

    def save(self, path: str | Path, extra_meta: dict[str, Any] | None = None) -> Path:
        meta = {"model_config": self.config.to_dict()}
        meta.update(extra_meta or {})
        return save_checkpoint(path, self.state_arrays(), meta)

    @classmethod
    def load(cls, path: str | Path) -> "DKCNet":
        arrays, meta = load_checkpoint(path)
        if "model_config" not in meta:
            raise StateError(f"{path}: checkpoint carries no model_config")
        model = cls(ModelConfig.from_dict(meta["model_config"]))
        model.load_state_arrays(arrays)
        return model


def model_forward(model: DKCNet, images, rng: np.random.Generator | None = None, mode: str = "eval") -> np.ndarray:
    """Per-class probabilities, shape (n, classes)."""
    p = model.forward(images, rng, mode).probabilities
    return p.data.reshape(p.shape[0], -1)


# ---------------------------------------------------------------------------
# Loss and optimizer
# ---------------------------------------------------------------------------

def bce_loss(y, y_hat: Tensor | np.ndarray, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross-entropy over all n * classes label slots.

    ``y_hat`` is clamped to [eps, 1 - eps]; the gradient is zero for
    entries the clamp moved.
    """
    if not isinstance(y_hat, Tensor):
        y_hat = Tensor(y_hat)
    y = np.asarray(y, dtype=np.float64)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    p = y_hat.data.reshape(y.shape) if y_hat.data.size == y.size else None
    if p is None:
        raise DimensionError(f"labels {y.shape} and predictions {y_hat.shape} differ in size")
    pc = np.clip(p, eps, 1.0 - eps)
    m = y.size
    loss = -np.sum(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)) / m
    inside = (p >= eps) & (p <= 1.0 - eps)

    def _backward(g: np.ndarray):
        d = -(y / pc - (1.0 - y) / (1.0 - pc)) / m * inside
        return ((g.item() * d).reshape(y_hat.shape),)

    return make_node(np.array(loss).reshape(1, 1, 1, 1), (y_hat,), _backward, "bce")


def decayed_lr(lr: float, decay: float, step: int) -> float:
    return lr / (1.0 + decay * step)


def sgd_step(
    params: Sequence[Tensor],
    lr: float,
    decay: float = 0.0,
    step_count: int = 0,
    *,
    decay_mode: str = "time",
    momentum: float = 0.0,
    velocity: dict[int, np.ndarray] | None = None,
) -> float:
    """One in-place SGD update; returns the learning rate used.

    ``decay_mode="time"`` uses lr / (1 + decay * step_count); ``"weight"``
    keeps lr fixed and adds ``decay * p`` to each gradient.
    """
    if decay_mode == "time":
        lr_t = decayed_lr(lr, decay, step_count)
    elif decay_mode == "weight":
        lr_t = lr
    else:
        raise ValueError(f"unknown decay_mode {decay_mode!r}")
    for p in params:
        if p.grad is None:
            raise StateError(f"parameter {p!r} has no gradient")
    for p in params:
        g = p.grad
        if decay_mode == "weight" and decay:
            g = g + decay * p.data
        if momentum:
            if velocity is None:
                raise StateError("momentum needs a velocity buffer dict")
            v = velocity.get(id(p))
            v = g.copy() if v is None else momentum * v + g
            velocity[id(p)] = v
            g = v
        p.data = p.data - lr_t * g
    return lr_t


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_auc: float
    val_f1: float
    val_kappa: float

    def row(self) -> list[str]:
        return [str(self.epoch)] + [repr(float(v)) for v in (self.train_loss, self.val_auc, self.val_f1, self.val_kappa)]


@dataclass
class TrainResult:
    model: DKCNet
    history: list[EpochLog]
    best_epoch: int
    best_state: dict[str, np.ndarray]
    train_index: np.ndarray
    val_index: np.ndarray

    @property
    def losses(self) -> list[float]:
        return [h.train_loss for h in self.history]

    def best_model(self) -> DKCNet:
        m = DKCNet(copy.deepcopy(self.model.config))
        m.load_state_arrays(self.best_state)
        return m


def split_indices(n: int, val_split: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * val_split))
    if n_val >= n:
        n_val = n - 1
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def kfold_indices(n: int, k: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled k-fold splits as (train, val) index pairs."""
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    return [
        (np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i])), np.sort(folds[i]))
        for i in range(k)
    ]


def write_log(path: str | Path, history: Sequence[EpochLog]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_FIELDS)
        for h in history:
            w.writerow(h.row())
    return path


def read_log(path: str | Path) -> list[EpochLog]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != LOG_FIELDS:
            raise ValueError(f"{path}: unexpected log header {reader.fieldnames}")
        return [
            EpochLog(int(r["epoch"]), float(r["train_loss"]), float(r["val_auc"]),
                     float(r["val_f1"]), float(r["val_kappa"]))
            for r in reader
        ]


def _validation_scores(model: DKCNet, images, labels, threshold: float) -> tuple[float, float, float]:
    if len(images) == 0:
        return math.nan, math.nan, math.nan
    probs = model.predict_proba(images)
    report = metrics.evaluate(labels, probs, threshold)
    return report.macro_auc, report.macro_f1, report.kappa


def train(
    images: np.ndarray,
    labels: np.ndarray,
    model_config: ModelConfig,
    train_config: TrainConfig,
    log_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
) -> TrainResult:
    """Mini-batch SGD on BCE; deterministic given ``train_config.seed``.

    Keeps the parameters of the epoch with the best macro validation AUC
    (NaN scores rank lowest; the last epoch wins when nothing is defined).
    """
    train_config.validate()
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if len(images) == 0:
        raise ValueError("empty dataset")
    if labels.ndim != 2 or labels.shape != (len(images), model_config.num_classes):
        raise DimensionError(f"labels must be (n, {model_config.num_classes}), got {labels.shape}")

    seeds = np.random.SeedSequence(train_config.seed).spawn(3)
    init_seed = int(seeds[0].generate_state(1)[0])
    shuffle_rng = np.random.default_rng(seeds[1])
    dropout_rng = np.random.default_rng(seeds[2])

    model = DKCNet(model_config, seed=init_seed)
    tr_idx, va_idx = split_indices(len(images), train_config.val_split, train_config.seed)
    params = model.trainable()
    velocity: dict[int, np.ndarray] = {}

    history: list[EpochLog] = []
    best_score = -math.inf
    best_epoch = 0
    best_state = model.state_arrays()
    step = 0
    bs = train_config.batch_size
    for epoch in range(1, train_config.epochs + 1):
        order = shuffle_rng.permutation(tr_idx)
        total = 0.0
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            res = model.forward(images[idx], dropout_rng, mode="train")
            loss = bce_loss(labels[idx], res.probabilities)
            zero_grads(params)
            backward(loss)
            sgd_step(params, train_config.lr, train_config.decay, step,
                     decay_mode=train_config.decay_mode, momentum=train_config.momentum,
                     velocity=velocity)
            step += 1
            total += loss.data.item() * len(idx)
        train_loss = total / len(order)
        auc, f1, kappa = _validation_scores(model, images[va_idx], labels[va_idx], train_config.threshold)
        history.append(EpochLog(epoch, train_loss, auc, f1, kappa))
        logger.info("epoch %d loss %.5f val_auc %.4f", epoch, train_loss, auc)

        score = -math.inf if math.isnan(auc) else auc
        if score > best_score or (best_score == -math.inf and score == -math.inf):
            best_score, best_epoch, best_state = score, epoch, model.state_arrays()
        if train_config.target_loss is not None and train_loss < train_config.target_loss:
            break

    if log_path is not None:
        write_log(log_path, history)
    result = TrainResult(model, history, best_epoch, best_state, tr_idx, va_idx)
    if checkpoint_path is not None:
        result.best_model().save(checkpoint_path, {"best_epoch": best_epoch, "seed": train_config.seed})
    return result


def predict(model: DKCNet, images: np.ndarray, threshold: float = 0.5) -> list[Prediction]:
    probs = model.predict_proba(np.asarray(images, dtype=np.float64))
    decisions = metrics.threshold_predictions(probs, threshold)
    return [Prediction(p, d, threshold) for p, d in zip(probs, decisions)]


def merge_eye_predictions(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Patient-level probabilities as the per-class max over both eyes."""
    return np.maximum(np.asarray(left), np.asarray(right))
