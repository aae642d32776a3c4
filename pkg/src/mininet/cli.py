"""Command-line entry point.

Subcommands: train, eval, predict, params, gradcheck, ablate. Settings
come from an optional flat config file plus ``--<dotted.key> value``
overrides (overrides win); the effective config is echoed into the output
directory so any run can be reproduced from its artifacts alone.

Exit codes: 0 ok, 2 bad config, 3 data errors, 4 numeric failure,
5 checkpoint mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import load_manifest, load_dataset, write_pgm, write_ppm
from .errors import (CheckpointError, ConfigError, DataError, MiniNetError,
                     NumericError, ShapeError)
from .gradcheck import audit_suite
from .losses import parse_loss_label
from .metrics import confusion
from .model import MiniNet, count_parameters
from .training import (ablation_table, evaluate, predict_scores, run_ablation,
                       train)
from .util import thread_cap

REFERENCE_TOTAL_PARAMS = 37_685
REFERENCE_TRAINABLE_PARAMS = 36_657


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mininet",
        description="Lightweight binary segmentation network: training, "
                    "evaluation and audits.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="flat key = value config file")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("train", help="train a model and keep the best checkpoint")
    common(p)
    p.add_argument("--dice-literal", action="store_true",
                   help="use the per-image squared-complement dice variant")

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))

    p = sub.add_parser("predict", help="write predicted masks for one split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--overlay", action="store_true",
                   help="also write TP/FP/FN overlays (green/blue/red)")

    p = sub.add_parser("params", help="parameter audit of the configured model")
    common(p, needs_out=False)
    p.add_argument("--out", help="optional output directory")

    p = sub.add_parser("gradcheck", help="finite-difference operator audit")
    common(p, needs_out=False)
    p.add_argument("--out", help="optional output directory")

    p = sub.add_parser("ablate", help="train one model per loss spec and compare")
    common(p)
    p.add_argument("--specs", required=True,
                   help="comma-separated loss labels, e.g. "
                        "'dice,alpha(dice+bce+jacc)'")
    p.add_argument("--dice-literal", action="store_true")
    return parser


def _collect_overrides(rest) -> dict:
    overrides = {}
    i = 0
    while i < len(rest):
        token = rest[i]
        if not token.startswith("--") or "." not in token:
            raise ConfigError(f"unrecognized argument {token!r}")
        key = token[2:]
        if "=" in key:
            key, _, value = key.partition("=")
        else:
            if i + 1 >= len(rest):
                raise ConfigError(f"flag --{key} is missing a value")
            value = rest[i + 1]
            i += 1
        if key not in cfgmod.SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        overrides[key] = value
        i += 1
    return overrides


@contextmanager
def _locked_output(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(
            f"output directory {out_dir} is locked by another run "
            f"(remove {lock} if stale)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out_dir
    finally:
        lock.unlink(missing_ok=True)


def _effective(args, overrides) -> tuple:
    file_values = cfgmod.parse_config_file(args.config) if args.config else {}
    if getattr(args, "dice_literal", False):
        overrides = dict(overrides)
        overrides["loss.dice_literal"] = "true"
    values = cfgmod.effective_config(file_values, overrides)
    provided = set(file_values) | set(overrides)
    return values, provided


def _resolve_manifest_path(values, args) -> Path:
    raw = values["data.manifest"]
    if not raw:
        raise ConfigError("data.manifest is not set")
    path = Path(raw)
    if not path.is_absolute() and args.config:
        candidate = Path(args.config).resolve().parent / path
        if candidate.is_file():
            return candidate
    return path


def _load_data(values, args):
    manifest_path = _resolve_manifest_path(values, args)
    manifest = load_manifest(manifest_path,
                             (values["data.height"], values["data.width"]),
                             values["data.channels"])
    return load_dataset(manifest)


def _echo(values, out_dir: Path):
    (out_dir / "effective.cfg").write_text(cfgmod.format_config(values),
                                           encoding="utf-8")


def cmd_train(args, overrides) -> int:
    values, _ = _effective(args, overrides)
    dataset = _load_data(values, args)
    model = MiniNet(cfgmod.to_model_config(values), seed=values["train.seed"])
    train_cfg = cfgmod.to_train_config(values)
    with _locked_output(Path(args.out)) as out_dir:
        _echo(values, out_dir)
        ckpt, runlog = train(model, dataset, train_cfg, verbose=args.verbose)
        save_checkpoint(ckpt, out_dir / "best.ckpt")
        runlog.write_jsonl(out_dir / "runlog.jsonl")
    print(f"best epoch {runlog.best_epoch} ({runlog.stop_reason}); "
          f"checkpoint and runlog written to {out_dir}")
    return 0


def _restore_for(args, values, provided):
    ckpt = load_checkpoint(args.checkpoint)
    requested = cfgmod.to_model_config(values)
    if any(key.startswith("model.") for key in provided) and requested != ckpt.config:
        raise CheckpointError(
            f"checkpoint architecture {ckpt.config.to_dict()} does not match "
            f"requested config {requested.to_dict()}"
        )
    return ckpt.build_model()


def cmd_eval(args, overrides) -> int:
    values, provided = _effective(args, overrides)
    dataset = _load_data(values, args)
    model = _restore_for(args, values, provided)
    samples = dataset.split(args.split)
    if not samples:
        raise DataError(f"split {args.split!r} holds no records")
    report = evaluate(model, samples, values["train.threshold"])
    with _locked_output(Path(args.out)) as out_dir:
        _echo(values, out_dir)
        (out_dir / "metrics.txt").write_text(report.format_table() + "\n",
                                             encoding="utf-8")
        with open(out_dir / "per_image.jsonl", "w", encoding="utf-8") as fh:
            for image in report.per_image:
                fh.write(json.dumps(image.to_record(), sort_keys=True) + "\n")
    print(report.format_table())
    return 0


def cmd_predict(args, overrides) -> int:
    values, provided = _effective(args, overrides)
    dataset = _load_data(values, args)
    model = _restore_for(args, values, provided)
    samples = dataset.split(args.split)
    if not samples:
        raise DataError(f"split {args.split!r} holds no records")
    threshold = values["train.threshold"]
    with _locked_output(Path(args.out)) as out_dir:
        _echo(values, out_dir)
        for sample in samples:
            scores = predict_scores(model, sample)[0]
            mask = np.where(scores >= threshold, 255, 0).astype(np.uint8)
            write_pgm(out_dir / f"{sample.record.record_id}_mask.pgm", mask)
            if args.overlay:
                write_ppm(out_dir / f"{sample.record.record_id}_overlay.ppm",
                          _overlay(scores, sample.mask[0], threshold))
    print(f"wrote {len(samples)} mask(s) to {out_dir}")
    return 0


def _overlay(scores, target, threshold):
    """TP green, FP blue, FN red, TN black (uint8 RGB, channels-first)."""
    pred = scores >= threshold
    truth = target > 0.5
    rgb = np.zeros((3,) + pred.shape, dtype=np.uint8)
    rgb[1][pred & truth] = 255
    rgb[2][pred & ~truth] = 255
    rgb[0][~pred & truth] = 255
    return rgb


def cmd_params(args, overrides) -> int:
    values, _ = _effective(args, overrides)
    model = MiniNet(cfgmod.to_model_config(values), seed=values["train.seed"])
    counts = count_parameters(model)
    lines = [f"{'layer':<40} {'shape':<18} {'count':>8}  kind"]
    for name, shape, count, trainable in counts.layers:
        kind = "trainable" if trainable else "running-stat"
        lines.append(f"{name:<40} {str(shape):<18} {count:>8}  {kind}")
    lines.append("")
    lines.append(f"total {counts.total}  trainable {counts.trainable}  "
                 f"non-trainable {counts.non_trainable}")
    lines.append(
        f"delta vs reference budget {REFERENCE_TOTAL_PARAMS} total / "
        f"{REFERENCE_TRAINABLE_PARAMS} trainable: "
        f"{counts.total - REFERENCE_TOTAL_PARAMS:+d} total / "
        f"{counts.trainable - REFERENCE_TRAINABLE_PARAMS:+d} trainable"
    )
    text = "\n".join(lines)
    print(text)
    if args.out:
        with _locked_output(Path(args.out)) as out_dir:
            _echo(values, out_dir)
            (out_dir / "params.txt").write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_gradcheck(args, overrides) -> int:
    values, _ = _effective(args, overrides)
    report = audit_suite(seed=values["train.seed"])
    text = report.format_table()
    print(text)
    if args.out:
        with _locked_output(Path(args.out)) as out_dir:
            _echo(values, out_dir)
            (out_dir / "gradcheck.txt").write_text(text + "\n", encoding="utf-8")
    return 0 if report.passed else 1


def cmd_ablate(args, overrides) -> int:
    values, _ = _effective(args, overrides)
    dataset = _load_data(values, args)
    specs = [parse_loss_label(label) for label in args.specs.split(",")]
    if getattr(args, "dice_literal", False):
        from dataclasses import replace
        specs = [replace(s, dice_literal=True) for s in specs]
    train_cfg = cfgmod.to_train_config(values)
    rows = run_ablation(dataset, specs, train_cfg,
                        cfgmod.to_model_config(values), verbose=args.verbose)
    table = ablation_table(rows)
    with _locked_output(Path(args.out)) as out_dir:
        _echo(values, out_dir)
        (out_dir / "ablation.txt").write_text(table + "\n", encoding="utf-8")
        with open(out_dir / "ablation.jsonl", "w", encoding="utf-8") as fh:
            for label, report, _ in rows:
                rec = {"spec": label}
                rec.update(report.mean)
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(table)
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "params": cmd_params,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def _fail(code: int, kind: str, exc: Exception) -> int:
    print(f"error code={code} kind={kind} reason={exc}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = _build_parser()
    args, rest = parser.parse_known_args(argv)
    try:
        thread_cap()  # validate the env var early
        overrides = _collect_overrides(rest)
        return COMMANDS[args.command](args, overrides)
    except ConfigError as exc:
        return _fail(2, "config", exc)
    except (DataError, ShapeError) as exc:
        return _fail(3, "data", exc)
    except NumericError as exc:
        return _fail(4, "numeric", exc)
    except CheckpointError as exc:
        return _fail(5, "checkpoint", exc)
    except MiniNetError as exc:
        return _fail(1, "internal", exc)


if __name__ == "__main__":
    sys.exit(main())
