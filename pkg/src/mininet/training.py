"""Training loop, evaluation and the loss-ablation harness.

Batches are formed once from the manifest order; only their processing
order is reshuffled each epoch (seeded), so a frozen model scores the same
training loss every epoch. Logged train/val losses are the unweighted
composite; the alpha schedule scales the gradient only and is logged as
its own column. Early stopping monitors the validation composite computed
with batch statistics (running stats untouched), checkpoints on strict
improvement and stops after ``patience`` stale epochs.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import Checkpoint, restore_model
from .convops import frozen_stats
from .data import AugmentFlags, LoadedDataset, augment_pair
from .errors import DataError, NumericError
from .losses import LossSpec, composite_loss
from .metrics import MetricReport, build_report
from .model import MiniNet, ModelConfig
from .optim import Adam
from .util import derive_rng


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-4
    batch_size: int = 4
    patience: int = 4
    seed: int = 0
    val_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    threshold: float = 0.5
    loss: LossSpec = field(default_factory=LossSpec)
    augment: AugmentFlags = field(default_factory=AugmentFlags)

    def __post_init__(self):
        if self.epochs < 1:
            raise DataError("epochs must be >= 1")
        if self.patience < 1:
            raise DataError("patience must be >= 1")
        if self.learning_rate < 0:
            raise DataError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise DataError("batch size must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise DataError("val_fraction must lie in (0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    alpha: float
    seconds: float

    def to_record(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss,
                "val_loss": self.val_loss, "alpha": self.alpha,
                "seconds": self.seconds}


@dataclass
class RunLog:
    epochs: list
    best_epoch: int
    stop_reason: str  # "completed" | "early-stopped"
    final_metrics: dict

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.epochs:
                fh.write(json.dumps(rec.to_record(), sort_keys=True) + "\n")
            fh.write(json.dumps({"best_epoch": self.best_epoch,
                                 "stop_reason": self.stop_reason,
                                 "final_metrics": self.final_metrics},
                                sort_keys=True) + "\n")


def resolve_validation(dataset: LoadedDataset, cfg: TrainConfig):
    """Explicit val records if present, else a seeded holdout of the train
    split (never the test split)."""
    train = dataset.split("train")
    val = dataset.split("val")
    if not train:
        raise DataError("train split is empty")
    if val:
        return train, val
    if len(train) < 2:
        raise DataError(
            "cannot hold out a validation split from a single training record"
        )
    k = max(1, round(len(train) * cfg.val_fraction))
    k = min(k, len(train) - 1)
    held = set(derive_rng(cfg.seed, "val_split").permutation(len(train))[:k].tolist())
    train_part = [s for i, s in enumerate(train) if i not in held]
    val_part = [s for i, s in enumerate(train) if i in held]
    return train_part, val_part


def _stack_batch(batch, flags: AugmentFlags, rng):
    images = []
    masks = []
    for sample in batch:
        img, msk = sample.image, sample.mask
        if flags.any:
            img, msk = augment_pair(img, msk, flags, rng)
        images.append(img)
        masks.append(msk)
    return Tensor(np.stack(images)), Tensor(np.stack(masks))


def _monitored_val_loss(model: MiniNet, samples, spec: LossSpec) -> float:
    """Mean per-image composite under batch statistics, state untouched."""
    total = 0.0
    with ad.no_grad(), frozen_stats():
        for s in samples:
            pred = model.forward(Tensor(s.image), training=True)
            total += float(composite_loss(pred, Tensor(s.mask), spec).data)
    return total / len(samples)


def train(model: MiniNet, dataset: LoadedDataset, cfg: TrainConfig,
          verbose: bool = False):
    """Run the full loop; returns (best checkpoint, run log) and leaves the
    model restored to its best state."""
    train_samples, val_samples = resolve_validation(dataset, cfg)
    optimizer = Adam(list(model.named_parameters()), cfg.learning_rate,
                     cfg.beta1, cfg.beta2, cfg.adam_eps)
    batches = [train_samples[i:i + cfg.batch_size]
               for i in range(0, len(train_samples), cfg.batch_size)]

    best_val = math.inf
    best_ckpt = None
    best_epoch = 0
    stale = 0
    stop_reason = "completed"
    records = []

    for epoch in range(1, cfg.epochs + 1):
        started = time.monotonic()
        alpha = cfg.loss.alpha.value(epoch - 1)
        order = derive_rng(cfg.seed, f"batch_order/{epoch}").permutation(len(batches))
        aug_rng = derive_rng(cfg.seed, f"augment/{epoch}")
        loss_sum = 0.0
        image_count = 0
        for index in order:
            batch = batches[index]
            x, y = _stack_batch(batch, cfg.augment, aug_rng)
            model.zero_grad()
            pred = model.forward(x, training=True)
            composite = composite_loss(pred, y, cfg.loss)
            value = float(composite.data)
            if not math.isfinite(value):
                ids = [s.record.record_id for s in batch]
                raise NumericError(
                    f"non-finite loss at epoch {epoch} in batch {ids}"
                )
            ad.backward(ad.scale(composite, alpha))
            optimizer.step()
            loss_sum += value * len(batch)
            image_count += len(batch)
        train_loss = loss_sum / image_count
        val_loss = _monitored_val_loss(model, val_samples, cfg.loss)
        seconds = time.monotonic() - started
        records.append(EpochRecord(epoch, train_loss, val_loss, alpha, seconds))
        if verbose:
            print(f"epoch {epoch:3d}  train {train_loss:.4f}  "
                  f"val {val_loss:.4f}  alpha {alpha:.4f}  {seconds:.1f}s")
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            stale = 0
            best_ckpt = Checkpoint.from_model(model, cursor={
                "epoch": epoch, "best_val_loss": val_loss, "alpha": alpha,
                "alpha_mode": cfg.loss.alpha.mode,
                "alpha0": cfg.loss.alpha.alpha0,
                "gamma": cfg.loss.alpha.gamma,
            })
        else:
            stale += 1
            if stale >= cfg.patience:
                stop_reason = "early-stopped"
                break

    restore_model(model, best_ckpt)
    final_report = evaluate(model, val_samples, cfg.threshold)
    runlog = RunLog(records, best_epoch, stop_reason, dict(final_report.mean))
    return best_ckpt, runlog


def predict_scores(model: MiniNet, sample) -> np.ndarray:
    """Eval-mode foreground probabilities for one sample, (1, H, W)."""
    with ad.no_grad():
        return model.forward(Tensor(sample.image), training=False).data


def evaluate(model: MiniNet, samples, threshold: float = 0.5) -> MetricReport:
    if not samples:
        raise DataError("evaluation split is empty")
    items = ((s.record.record_id, predict_scores(model, s), s.mask)
             for s in samples)
    return build_report(items, threshold)


def run_ablation(dataset: LoadedDataset, specs, cfg: TrainConfig,
                 model_config: ModelConfig, verbose: bool = False):
    """Train one model per loss spec from a shared seed; returns
    (label, test MetricReport, RunLog) rows in spec order."""
    if len(specs) < 2:
        raise DataError("ablation needs at least two loss specs")
    rows = []
    for spec in specs:
        model = MiniNet(model_config, seed=cfg.seed)
        spec_cfg = replace(cfg, loss=spec)
        if verbose:
            print(f"[ablate] training {spec.label()}")
        _, runlog = train(model, dataset, spec_cfg, verbose=verbose)
        report = evaluate(model, dataset.split("test"), cfg.threshold)
        rows.append((spec.label(), report, runlog))
    return rows


def ablation_table(rows) -> str:
    cols = ("jaccard", "f1", "accuracy", "sensitivity", "specificity")
    header = f"{'loss spec':<24}" + "".join(f"{c:>14}" for c in cols)
    lines = [header]
    for label, report, _ in rows:
        lines.append(f"{label:<24}" + "".join(
            f"{report.mean[c]:>14.4f}" for c in cols))
    return "\n".join(lines)
