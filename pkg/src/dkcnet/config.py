"""Run configuration: one YAML file, command-line flags override it.

Example (every key optional; the values shown are the defaults)::

    seed: 0
    out_dir: runs
    data:
      manifest: null
      keyword_map: null        # tab-separated table; null uses the built-in map
    balance:
      mode: over               # over | under
      cbf: odir-over           # preset name or {N: 0, D: 0, G: 5, ...}
      rule: table              # table: M = N*k ; literal: M = N*(1+k)
    model:
      input_size: 224
      attention: true
      head_dropout: 0.3
      backbone: {stages: [[16, 2], [32, 2], [32, 2], [32, 2], [32, 2]], kernel_size: 3}
      dkc: {groups: 2, dilations: [2, 3, 4], kernel_size: 2, reduction: 16, dropout: 0.25}
      se: {reduction: 16}
    train: {lr: 0.0005, decay: 1.0e-6, decay_mode: time, momentum: 0.0,
            batch_size: 16, epochs: 100, val_split: 0.2}
    metrics: {threshold: 0.5, per_class_kappa: false}
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .attention import ConfigError
from .data.balance import parse_cbf
from .model import ModelConfig, TrainConfig


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs"
    manifest: str | None = None
    keyword_map: str | None = None
    balance_mode: str = "over"
    cbf: dict[str, int] = field(default_factory=lambda: parse_cbf("odir-over"))
    balance_rule: str = "table"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    threshold: float = 0.5
    per_class_kappa: bool = False

    def validate(self, require_manifest: bool = False) -> None:
        self.model.validate()
        self.train.validate()
        if self.balance_mode not in ("over", "under"):
            raise ConfigError(f"balance mode must be 'over' or 'under', got {self.balance_mode!r}")
        if self.balance_rule not in ("table", "literal"):
            raise ConfigError(f"balance rule must be 'table' or 'literal', got {self.balance_rule!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must be in [0, 1]")
        for label, p in (("manifest", self.manifest), ("keyword_map", self.keyword_map)):
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{label} path does not exist: {p}")
        if require_manifest and self.manifest is None:
            raise ConfigError("a manifest is required (config data.manifest or --manifest)")

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "data": {"manifest": self.manifest, "keyword_map": self.keyword_map},
            "balance": {"mode": self.balance_mode, "cbf": dict(self.cbf), "rule": self.balance_rule},
            "model": self.model.to_dict(),
            "train": asdict(self.train),
            "metrics": {"threshold": self.threshold, "per_class_kappa": self.per_class_kappa},
        }


def run_config_from_dict(d: dict[str, Any] | None) -> RunConfig:
    d = copy.deepcopy(d or {})
    known = {"seed", "out_dir", "data", "balance", "model", "train", "metrics"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    data = d.get("data") or {}
    bal = d.get("balance") or {}
    met = d.get("metrics") or {}
    cbf = bal.get("cbf", "odir-over")
    try:
        cbf = parse_cbf(cbf) if isinstance(cbf, str) else {str(k): int(v) for k, v in cbf.items()}
        model = ModelConfig.from_dict(d.get("model") or {})
        train = TrainConfig(**(d.get("train") or {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config: {exc}") from exc
    cfg = RunConfig(
        seed=int(d.get("seed", 0)),
        out_dir=str(d.get("out_dir", "runs")),
        manifest=data.get("manifest"),
        keyword_map=data.get("keyword_map"),
        balance_mode=bal.get("mode", "over"),
        cbf=cbf,
        balance_rule=bal.get("rule", "table"),
        model=model,
        train=train,
        threshold=float(met.get("threshold", 0.5)),
        per_class_kappa=bool(met.get("per_class_kappa", False)),
    )
    cfg.train.seed = cfg.seed
    return cfg


def load_run_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return run_config_from_dict({})
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return run_config_from_dict(raw)


def dump_run_config(cfg: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
    return path
