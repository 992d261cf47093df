"""Command-line entry point: ``dkcnet <command> [options]``.

Commands: synth, preprocess, balance, train, eval, explain, verify.
Every command reads the optional YAML run config (``--config``); flags
given on the command line win over the file.  Outputs go under
``--out-dir`` only.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 failed
verification.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .attention import ConfigError
from .checkpoint import CheckpointError
from .config import RunConfig, dump_run_config, load_run_config
from .data.balance import (
    ODIR_REPORTED_OVERSAMPLED,
    ODIR_REPORTED_UNDERSAMPLED,
    balanced_counts,
    execute_balance,
    parse_cbf,
    plan_oversample,
    plan_undersample,
)
from .data.imaging import DegenerateInputError
from .data.pipeline import load_dataset, load_record_image, preprocess_manifest
from .data.records import (
    CLASS_NAMES,
    BalancedRecord,
    ManifestError,
    class_histogram,
    load_keyword_map,
    read_balanced_manifest,
    read_eye_manifest,
    with_image,
    write_balanced_manifest,
)
from .data.synthetic import write_synthetic_corpus
from .explain import LAYERS, compare_layers, grad_cam, write_heatmap
from .metrics import evaluate
from .model import DKCNet, ModelConfig, train
from .plots import plot_heatmap_panel, plot_roc_curves, plot_training_curves
from .tensor import DimensionError, StateError
from .verify import CHECKS, run_checks

log = logging.getLogger("dkcnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> int:
    out = Path(cfg.out_dir)
    path = write_synthetic_corpus(out, args.n_per_class, cfg.seed, args.size, args.composites, args.artifacts)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_preprocess(cfg: RunConfig, args) -> int:
    cfg.validate(require_manifest=True)
    kmap = load_keyword_map(cfg.keyword_map)
    size = args.size or cfg.model.input_size
    path, summary = preprocess_manifest(cfg.manifest, cfg.out_dir, kmap, size)
    for line in summary.lines():
        print(line)
    print(f"wrote {path}")
    return EXIT_OK


def balance_table(plan, reported: dict[str, int] | None = None) -> list[str]:
    """Per-class before/after rows; the reference column appears for the built-in presets."""
    head = f"{'class':<6}{'samples':>9}{'CBF':>6}{'balanced':>10}"
    lines = [head + (f"{'reference':>11}" if reported else "")]
    for c, p in plan.classes.items():
        row = f"{c:<6}{p.n:>9}{p.k:>6}{p.m:>10}"
        if reported:
            row += f"{reported.get(c, ''):>11}"
        lines.append(row)
    return lines


def cmd_balance(cfg: RunConfig, args) -> int:
    cfg.validate(require_manifest=True)
    manifest = Path(cfg.manifest)
    out = Path(cfg.out_dir)
    records = read_eye_manifest(manifest)
    if not records:
        raise ManifestError(f"{manifest}: no records")
    counts = class_histogram(records)
    try:
        if cfg.balance_mode == "over":
            plan = plan_oversample(counts, cfg.cbf, cfg.balance_rule)
        else:
            plan = plan_undersample(counts, cfg.cbf)
    except ValueError as exc:
        raise ConfigError(f"balance plan: {exc}") from exc
    rows = execute_balance(records, plan, cfg.seed)

    # image paths stay valid relative to the new manifest's directory
    out.mkdir(parents=True, exist_ok=True)
    rel = os.path.relpath(manifest.parent.resolve(), out.resolve())
    rows = [
        BalancedRecord(with_image(r.record, Path(rel, r.record.image).as_posix()), r.balance_class, r.augmentation, r.seed)
        for r in rows
    ]
    path = write_balanced_manifest(out / "balanced.csv", rows)

    preset = {"over": ("odir-over", ODIR_REPORTED_OVERSAMPLED), "under": ("odir-under", ODIR_REPORTED_UNDERSAMPLED)}
    name, reported = preset[cfg.balance_mode]
    same_preset = cfg.cbf == parse_cbf(name) and args.show_reference
    lines = balance_table(plan, reported if same_preset else None)
    got = balanced_counts(rows)
    lines.append(f"total: {sum(p.n for p in plan.classes.values())} -> {sum(got.values())}")
    (out / "balance_summary.txt").write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    print(f"wrote {path}")
    return EXIT_OK


def _train_one(cfg: RunConfig, images, labels, out: Path, attention: bool):
    model_cfg = ModelConfig.from_dict({**cfg.model.to_dict(), "attention": attention})
    out.mkdir(parents=True, exist_ok=True)
    result = train(images, labels, model_cfg, cfg.train, out / "train_log.csv", out / "checkpoint.npz")
    last = result.history[-1]
    print(f"[{'backbone+dkc+se' if attention else 'backbone'}] epochs {len(result.history)}, "
          f"final train loss {last.train_loss:.4f}, best epoch {result.best_epoch}, "
          f"val auc {last.val_auc:.4f}")
    return result


def cmd_train(cfg: RunConfig, args) -> int:
    cfg.validate(require_manifest=True)
    out = Path(cfg.out_dir)
    images, labels, _ = load_dataset(cfg.manifest, cfg.model.input_size)
    modes = {"full": [True], "backbone": [False], "both": [False, True]}[args.mode]
    dump_run_config(cfg, out / "run_config.yaml")

    histories = {}
    for attention in modes:
        name = "attention" if attention else "backbone"
        run_dir = out / name if len(modes) > 1 else out
        histories[name] = _train_one(cfg, images, labels, run_dir, attention).history
    plot_training_curves(histories, out / "training.png")

    if len(modes) > 1:
        lines = ["mode,epochs,final_train_loss,best_val_auc,final_val_f1,final_val_kappa"]
        best = {}
        for name, hist in histories.items():
            best[name] = max((h.val_auc for h in hist if h.val_auc == h.val_auc), default=float("nan"))
            last = hist[-1]
            lines.append(f"{name},{len(hist)},{last.train_loss!r},{best[name]!r},{last.val_f1!r},{last.val_kappa!r}")
        (out / "comparison.csv").write_text("\n".join(lines) + "\n")
        # reported only: a toy corpus cannot certify which mode is better
        print(f"best val AUC, attention minus backbone: {best['attention'] - best['backbone']:+.4f}")
    return EXIT_OK


def _load_model(path: str) -> DKCNet:
    if not Path(path).exists():
        raise ConfigError(f"checkpoint not found: {path}")
    return DKCNet.load(path)


def cmd_eval(cfg: RunConfig, args) -> int:
    cfg.validate(require_manifest=True)
    model = _load_model(args.checkpoint)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images, labels, rows = load_dataset(cfg.manifest, model.config.input_size)
    probs = model.predict_proba(images)
    report = evaluate(labels, probs, cfg.threshold, cfg.per_class_kappa)
    report.write(out / "metrics.txt")
    report.write_roc_csvs(out)
    if report.curves:
        plot_roc_curves(report, out / "roc.png")
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "side", "augmentation"] + [f"p_{c}" for c in CLASS_NAMES] + [f"y_{c}" for c in CLASS_NAMES])
        for r, p, y in zip(rows, probs, labels):
            w.writerow([r.record.patient_id, r.record.side, r.augmentation]
                       + [repr(float(v)) for v in p] + [int(v) for v in y])
    print(f"macro AUC {report.macro_auc:.4f}  macro F1 {100 * report.macro_f1:.2f}  kappa {report.kappa:.4f}")
    print(f"wrote {out / 'metrics.txt'}")
    return EXIT_OK


def _class_index(text: str | None) -> int | None:
    if text is None:
        return None
    if text in CLASS_NAMES:
        return CLASS_NAMES.index(text)
    try:
        j = int(text)
    except ValueError:
        raise ConfigError(f"class must be one of {CLASS_NAMES} or an index, got {text!r}") from None
    if not 0 <= j < len(CLASS_NAMES):
        raise ConfigError(f"class index out of range: {j}")
    return j


def cmd_explain(cfg: RunConfig, args) -> int:
    cfg.validate(require_manifest=True)
    cls = _class_index(args.class_name)
    layers = ("backbone_out", args.layer)
    model = _load_model(args.checkpoint)
    if not model.config.attention and args.layer != "backbone_out":
        layers = ("backbone_out",)

    rows = [r for r in read_balanced_manifest(cfg.manifest) if r.augmentation == "none"]
    wanted = [s for s in (args.ids or "").split(",") if s]
    if wanted:
        by_id = {r.record.patient_id + "_" + r.record.side: r for r in rows}
        by_id.update({r.record.patient_id: r for r in rows})
        missing = [w for w in wanted if w not in by_id]
        if missing:
            raise ManifestError(f"ids not in manifest: {missing}")
        rows = [by_id[w] for w in wanted]
    else:
        rows = rows[: args.limit]

    out = Path(cfg.out_dir)
    base = Path(cfg.manifest).parent
    panel_images, panel_rows = [], []
    for r in rows:
        img = load_record_image(base, r, model.config.input_size)
        chw = img.transpose(2, 0, 1)
        j = cls if cls is not None else int(np.argmax(model.predict_proba(chw[None])[0]))
        image_id = f"{r.record.patient_id}_{r.record.side}"
        if len(layers) == 2:
            maps = compare_layers(model, chw, j, layers, source=image_id)
        else:
            maps = (grad_cam(model, chw, j, layers[0], source=image_id),)
        for hm in maps:
            write_heatmap(out / "heatmaps", image_id, hm, img)
            flag = " (flat map)" if hm.degenerate else ""
            print(f"{image_id} class {CLASS_NAMES[j]} layer {hm.layer}{flag}")
        panel_images.append(img)
        panel_rows.append(maps)
    if panel_images:
        plot_heatmap_panel(panel_images, panel_rows, out / "heatmaps.png", ("image",) + layers)
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args) -> int:
    names = [s for s in (args.checks or "").split(",") if s] or None
    if names:
        unknown = set(names) - set(CHECKS)
        if unknown:
            raise ConfigError(f"unknown checks {sorted(unknown)}; choose from {sorted(CHECKS)}")
    results = run_checks(names)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML run config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out-dir", default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="dkcnet", parents=[common], description="Fundus multi-label classifier toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic fundus-like corpus")
    p.add_argument("--n-per-class", type=int, default=4)
    p.add_argument("--size", type=int, default=224)
    p.add_argument("--composites", type=int, default=0, help="extra two-label images")
    p.add_argument("--artifacts", type=int, default=0, help="extra eyes carrying an artifact keyword")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common], help="split pairs per eye, filter, crop, resize")
    p.add_argument("--manifest")
    p.add_argument("--keyword-map")
    p.add_argument("--size", type=int, help="output side (default: model input size)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("balance", parents=[common], help="over- or undersample a processed manifest")
    p.add_argument("--manifest")
    p.add_argument("--mode", choices=("over", "under"))
    p.add_argument("--cbf", help="preset (odir-over, odir-under) or N=0,D=0,G=5,...")
    p.add_argument("--rule", choices=("table", "literal"))
    p.add_argument("--show-reference", action="store_true",
                   help="add the reference counts column when a preset CBF is used")
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("train", parents=[common], help="train backbone-only, full, or both")
    p.add_argument("--manifest")
    p.add_argument("--mode", choices=("full", "backbone", "both"), default="full")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--val-split", type=float)
    p.add_argument("--input-size", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="metrics for a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", parents=[common], help="Grad-CAM heatmaps for manifest images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")
    p.add_argument("--ids", help="comma-separated <id> or <id>_<side>")
    p.add_argument("--class", dest="class_name", help="class name or index (default: top prediction)")
    p.add_argument("--layer", choices=LAYERS, default="se_out")
    p.add_argument("--limit", type=int, default=4, help="images to explain when --ids is not given")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("verify", parents=[common], help="run the self-check suite")
    p.add_argument("--checks", help=f"comma-separated subset of: {', '.join(CHECKS)}")
    p.set_defaults(func=cmd_verify)
    return parser


def resolve_config(args) -> RunConfig:
    """Load the config file, then apply command-line overrides."""
    cfg = load_run_config(getattr(args, "config", None))
    if hasattr(args, "seed"):
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    if hasattr(args, "out_dir"):
        cfg.out_dir = args.out_dir
    if getattr(args, "manifest", None):
        cfg.manifest = args.manifest
    if getattr(args, "keyword_map", None):
        cfg.keyword_map = args.keyword_map
    if getattr(args, "mode", None) in ("over", "under"):
        cfg.balance_mode = args.mode
    if getattr(args, "cbf", None):
        try:
            cfg.cbf = parse_cbf(args.cbf)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if getattr(args, "rule", None):
        cfg.balance_rule = args.rule
    if getattr(args, "threshold", None) is not None:
        cfg.threshold = args.threshold
    for flag in ("epochs", "lr", "momentum", "batch_size", "val_split"):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg.train, flag, value)
    if getattr(args, "input_size", None):
        cfg.model.input_size = args.input_size
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        return args.func(cfg, args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ManifestError, DegenerateInputError, CheckpointError, DimensionError, StateError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
