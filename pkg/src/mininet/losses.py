"""Segmentation losses: smoothed soft Dice, soft Jaccard, pixel BCE, and
their alpha-weighted composite.

Training losses use soft (probability-weighted) overlaps; reported metrics
threshold first (see ``metrics``). The composite is homogeneous in alpha:
``total_loss(..., alpha) == alpha * total_loss(..., alpha=1)`` exactly,
because alpha multiplies the already-summed composite once.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

BCE_CLAMP = 1e-7
DEFAULT_SMOOTHING = 1.0


@dataclass(frozen=True)
class AlphaSchedule:
    """Epoch-indexed positive weight on the composite loss.

    ``constant`` holds ``alpha0``; ``exponential`` decays it by ``gamma``
    per epoch: alpha(e) = alpha0 * gamma**e with e starting at 0.
    """

    mode: str = "constant"
    alpha0: float = 1.0
    gamma: float = 0.97

    def __post_init__(self):
        if self.mode not in ("constant", "exponential"):
            raise ConfigError(f"unknown alpha schedule {self.mode!r}")
        if self.alpha0 <= 0:
            raise ConfigError("alpha0 must be strictly positive")
        if self.mode == "exponential" and not 0 < self.gamma:
            raise ConfigError("gamma must be strictly positive")

    def value(self, epoch_index: int) -> float:
        if self.mode == "constant":
            return self.alpha0
        return self.alpha0 * self.gamma ** epoch_index


@dataclass(frozen=True)
class LossSpec:
    use_dice: bool = True
    use_jaccard: bool = True
    use_bce: bool = True
    dice_literal: bool = False  # per-image squared complement, no factor 2
    smoothing: float = DEFAULT_SMOOTHING
    alpha: AlphaSchedule = field(default_factory=AlphaSchedule)

    def __post_init__(self):
        if not (self.use_dice or self.use_jaccard or self.use_bce):
            raise ConfigError("loss spec enables no terms")
        if self.smoothing <= 0:
            raise ConfigError("smoothing must be positive")

    def label(self) -> str:
        parts = [n for n, on in (("dice", self.use_dice), ("bce", self.use_bce),
                                 ("jacc", self.use_jaccard)) if on]
        body = "+".join(parts)
        if self.alpha.mode == "exponential":
            return f"alpha({body})"
        return body

    def with_alpha(self, schedule: AlphaSchedule) -> "LossSpec":
        return replace(self, alpha=schedule)


def _check_pair(pred: Tensor, target: Tensor, op: str):
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"{op}: prediction shape {pred.data.shape} != target shape "
            f"{target.data.shape}"
        )


def dice_loss(pred: Tensor, target: Tensor, smoothing: float = DEFAULT_SMOOTHING) -> Tensor:
    """1 - (2*overlap + eps) / (sum(pred) + sum(target) + eps)."""
    _check_pair(pred, target, "dice_loss")
    inter = ad.tsum(ad.mul(pred, target))
    sums = ad.add(ad.tsum(pred), ad.tsum(target))
    ratio = ad.div(ad.affine(inter, 2.0, smoothing), ad.affine(sums, 1.0, smoothing))
    return ad.affine(ratio, -1.0, 1.0)


def dice_loss_literal(pred: Tensor, target: Tensor,
                      smoothing: float = DEFAULT_SMOOTHING) -> Tensor:
    """As-printed variant: per-image squared complement of overlap /
    (|pred| + |target|), summed over the leading batch dim, no factor 2.
    Its floor on a perfect prediction is 0.25 per image."""
    _check_pair(pred, target, "dice_loss")
    if pred.data.ndim < 4:
        images = [(pred, target)]
    else:
        n = pred.data.shape[0]
        images = [(_slice0(pred, i), _slice0(target, i)) for i in range(n)]
    total = None
    for p, t in images:
        inter = ad.tsum(ad.mul(p, t))
        sums = ad.add(ad.tsum(p), ad.tsum(t))
        ratio = ad.div(ad.affine(inter, 1.0, smoothing), ad.affine(sums, 1.0, smoothing))
        comp = ad.affine(ratio, -1.0, 1.0)
        sq = ad.mul(comp, comp)
        total = sq if total is None else ad.add(total, sq)
    return total


def _slice0(t: Tensor, i: int) -> Tensor:
    data = t.data[i]

    def bw(g):
        full = np.zeros_like(t.data)
        full[i] = g
        return (full,)

    return ad.record(data, (t,), bw)


def jaccard_loss(pred: Tensor, target: Tensor,
                 smoothing: float = DEFAULT_SMOOTHING) -> Tensor:
    """1 - (overlap + eps) / (union + eps), unions taken softly."""
    _check_pair(pred, target, "jaccard_loss")
    inter = ad.tsum(ad.mul(pred, target))
    sums = ad.add(ad.tsum(pred), ad.tsum(target))
    union = ad.sub(sums, inter)
    ratio = ad.div(ad.affine(inter, 1.0, smoothing), ad.affine(union, 1.0, smoothing))
    return ad.affine(ratio, -1.0, 1.0)


def bce_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy; predictions are clamped away from {0,1}."""
    _check_pair(pred, target, "bce_loss")
    p = ad.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    pos = ad.mul(target, ad.log(p))
    neg = ad.mul(ad.affine(target, -1.0, 1.0), ad.log(ad.affine(p, -1.0, 1.0)))
    return ad.scale(ad.tsum(ad.add(pos, neg)), -1.0 / pred.data.size)


def composite_loss(pred: Tensor, target: Tensor, spec: LossSpec) -> Tensor:
    """Unweighted sum of the enabled terms (the alpha=1 value)."""
    total = None
    if spec.use_dice:
        fn = dice_loss_literal if spec.dice_literal else dice_loss
        total = fn(pred, target, spec.smoothing)
    if spec.use_bce:
        term = bce_loss(pred, target)
        total = term if total is None else ad.add(total, term)
    if spec.use_jaccard:
        term = jaccard_loss(pred, target, spec.smoothing)
        total = term if total is None else ad.add(total, term)
    return total


def total_loss(pred: Tensor, target: Tensor, spec: LossSpec, epoch_index: int) -> Tensor:
    """alpha(epoch) times the composite of the enabled terms."""
    return ad.scale(composite_loss(pred, target, spec), spec.alpha.value(epoch_index))


def parse_loss_label(label: str) -> LossSpec:
    """Parse names like ``dice``, ``bce+jacc`` or ``alpha(dice+bce+jacc)``."""
    text = label.strip().lower()
    schedule = AlphaSchedule()
    if text.startswith("alpha(") and text.endswith(")"):
        text = text[len("alpha("):-1]
        schedule = AlphaSchedule(mode="exponential")
    terms = [t.strip() for t in text.split("+") if t.strip()]
    known = {"dice", "bce", "jacc", "jaccard"}
    bad = [t for t in terms if t not in known]
    if bad or not terms:
        raise ConfigError(f"cannot parse loss label {label!r}")
    return LossSpec(use_dice="dice" in terms,
                    use_bce="bce" in terms,
                    use_jaccard=("jacc" in terms or "jaccard" in terms),
                    alpha=schedule)
