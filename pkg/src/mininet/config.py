"""Flat ``key = value`` configuration with dotted namespaces.

One schema drives the config file, CLI flag overrides and the echoed
effective config, so every run directory carries the exact settings that
produced it. Unknown keys are rejected rather than ignored.
"""

from __future__ import annotations

from pathlib import Path

from .data import AugmentFlags
from .errors import ConfigError
from .losses import AlphaSchedule, LossSpec
from .model import ModelConfig
from .training import TrainConfig


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _int(raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}") from None


def _float(raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"expected a number, got {raw!r}") from None


def _str(raw: str) -> str:
    return raw.strip()


def _choice(*options):
    def cast(raw: str) -> str:
        value = raw.strip().lower()
        if value not in options:
            raise ConfigError(f"expected one of {options}, got {raw!r}")
        return value
    return cast


# key -> (caster, default)
SCHEMA = {
    "data.manifest": (_str, ""),
    "data.height": (_int, 64),
    "data.width": (_int, 64),
    "data.channels": (_choice("rgb", "gray"), "rgb"),
    "model.in_channels": (_int, 3),
    "model.base_width": (_int, 8),
    "model.depthwise": (_bool, True),
    "model.squeeze_ratio": (_int, 1),
    "train.epochs": (_int, 100),
    "train.patience": (_int, 4),
    "train.batch_size": (_int, 4),
    "train.seed": (_int, 0),
    "train.val_fraction": (_float, 0.1),
    "train.threshold": (_float, 0.5),
    "optimizer.lr": (_float, 1e-4),
    "optimizer.beta1": (_float, 0.9),
    "optimizer.beta2": (_float, 0.999),
    "optimizer.eps": (_float, 1e-8),
    "loss.use_dice": (_bool, True),
    "loss.use_bce": (_bool, True),
    "loss.use_jaccard": (_bool, True),
    "loss.dice_literal": (_bool, False),
    "loss.smoothing": (_float, 1.0),
    "loss.alpha_mode": (_choice("constant", "exponential"), "exponential"),
    "loss.alpha0": (_float, 1.0),
    "loss.gamma": (_float, 0.97),
    "augment.hflip": (_bool, False),
    "augment.vflip": (_bool, False),
    "augment.rot90": (_bool, False),
}


def parse_config_file(path) -> dict:
    """Read raw ``key = value`` pairs; comments start with ``#``."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    raw = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        raw[key.strip()] = value.strip()
    return raw


def effective_config(file_values: dict | None = None,
                     overrides: dict | None = None) -> dict:
    """Merge defaults < file < overrides into a fully typed mapping."""
    values = {key: default for key, (_, default) in SCHEMA.items()}
    for source in (file_values or {}, overrides or {}):
        for key, raw in source.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            caster, _ = SCHEMA[key]
            try:
                values[key] = caster(str(raw))
            except ConfigError as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from None
    return values


def format_config(values: dict) -> str:
    return "\n".join(f"{key} = {values[key]}" for key in sorted(values)) + "\n"


def to_model_config(values: dict) -> ModelConfig:
    return ModelConfig(in_channels=values["model.in_channels"],
                       base_width=values["model.base_width"],
                       depthwise=values["model.depthwise"],
                       squeeze_ratio=values["model.squeeze_ratio"])


def to_loss_spec(values: dict) -> LossSpec:
    schedule = AlphaSchedule(mode=values["loss.alpha_mode"],
                             alpha0=values["loss.alpha0"],
                             gamma=values["loss.gamma"])
    return LossSpec(use_dice=values["loss.use_dice"],
                    use_bce=values["loss.use_bce"],
                    use_jaccard=values["loss.use_jaccard"],
                    dice_literal=values["loss.dice_literal"],
                    smoothing=values["loss.smoothing"],
                    alpha=schedule)


def to_train_config(values: dict) -> TrainConfig:
    try:
        return TrainConfig(
            epochs=values["train.epochs"],
            learning_rate=values["optimizer.lr"],
            batch_size=values["train.batch_size"],
            patience=values["train.patience"],
            seed=values["train.seed"],
            val_fraction=values["train.val_fraction"],
            beta1=values["optimizer.beta1"],
            beta2=values["optimizer.beta2"],
            adam_eps=values["optimizer.eps"],
            threshold=values["train.threshold"],
            loss=to_loss_spec(values),
            augment=AugmentFlags(hflip=values["augment.hflip"],
                                 vflip=values["augment.vflip"],
                                 rot90=values["augment.rot90"]),
        )
    except Exception as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
