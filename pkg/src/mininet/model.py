"""The assembled segmentation network.

Stem conv+BN, two encoder stages (block + strided downsampling conv), a
bottleneck block, two decoder stages (stride-2 transposed conv + block +
additive skip from the matching encoder block output), and a two-conv head
ending in a sigmoid. Spatial widths follow
``(C,H,W) -> (2C,H/2,W/2) -> (4C,H/4,W/4) -> mirror -> (1,H,W)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import BatchNorm2d, Conv2d, DMResBlock, Module
from .convops import ConvSpec
from .errors import ShapeError
from .util import derive_rng


# sigmoid saturates to exactly 0/1 in float32 for |logit| > ~17; the head
# clamps into the open interval so predictions are always valid probabilities
PRED_CLAMP = 1e-7


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    base_width: int = 8
    depthwise: bool = True
    squeeze_ratio: int = 1

    def __post_init__(self):
        if self.in_channels < 1 or self.base_width < 1 or self.squeeze_ratio < 1:
            raise ShapeError("model config values must be positive")

    def to_dict(self) -> dict:
        return {"in_channels": self.in_channels, "base_width": self.base_width,
                "depthwise": self.depthwise, "squeeze_ratio": self.squeeze_ratio}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(int(d["in_channels"]), int(d["base_width"]),
                   bool(d["depthwise"]), int(d["squeeze_ratio"]))


class EncoderStage(Module):
    """Residual block followed by a stride-2 downsampling conv that doubles
    the channel count. Returns (block output kept for the skip, downsampled)."""

    def __init__(self, channels: int, rng, depthwise: bool, squeeze_ratio: int):
        super().__init__()
        self.block = self.register_child("block", DMResBlock(
            channels, rng, depthwise=depthwise, squeeze_ratio=squeeze_ratio))
        self.down = self.register_child("down", Conv2d(
            ConvSpec(channels, channels * 2, 3, stride=2, padding=1), rng))

    def __call__(self, x: Tensor, training: bool):
        h, w = x.data.shape[-2], x.data.shape[-1]
        if h % 2 or w % 2:
            raise ShapeError(
                f"encoder stage needs even spatial dims, got {h}x{w}; "
                "pad inputs to multiples of 4"
            )
        skip = self.block(x, training)
        return skip, self.down(skip)


class DecoderStage(Module):
    """Stride-2 transposed conv halving the channel count, a residual block
    whose final multiscale pair is transposed, then the additive skip."""

    def __init__(self, channels_in: int, rng, depthwise: bool, squeeze_ratio: int):
        super().__init__()
        self.up = self.register_child("up", Conv2d(
            ConvSpec(channels_in, channels_in // 2, 3, stride=2, padding=1,
                     transposed=True), rng))
        self.block = self.register_child("block", DMResBlock(
            channels_in // 2, rng, depthwise=depthwise,
            squeeze_ratio=squeeze_ratio, transposed_out=True))

    def __call__(self, x: Tensor, skip: Tensor, training: bool) -> Tensor:
        d = self.up(x)
        if d.data.shape != skip.data.shape:
            raise ShapeError(
                f"decoder skip shape {skip.data.shape} does not match "
                f"upsampled shape {d.data.shape}"
            )
        return ad.add(skip, self.block(d, training))


class MiniNet(Module):
    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        super().__init__()
        self.config = config
        self.seed = seed
        rng = derive_rng(seed, "init")
        cin, base = config.in_channels, config.base_width
        dw, sq = config.depthwise, config.squeeze_ratio
        self.stem = self.register_child("stem", Conv2d(
            ConvSpec(cin, base, 3), rng))
        self.stem_bn = self.register_child("stem_bn", BatchNorm2d(base))
        self.enc1 = self.register_child("enc1", EncoderStage(base, rng, dw, sq))
        self.enc2 = self.register_child("enc2", EncoderStage(base * 2, rng, dw, sq))
        self.bottleneck = self.register_child("bottleneck", DMResBlock(
            base * 4, rng, depthwise=dw, squeeze_ratio=sq))
        self.dec1 = self.register_child("dec1", DecoderStage(base * 4, rng, dw, sq))
        self.dec2 = self.register_child("dec2", DecoderStage(base * 2, rng, dw, sq))
        self.head_mid = self.register_child("head_mid", Conv2d(
            ConvSpec(base, cin, 1), rng))
        self.head_bn = self.register_child("head_bn", BatchNorm2d(cin))
        self.head_out = self.register_child("head_out", Conv2d(
            ConvSpec(cin, 1, 1), rng))

    def forward(self, x: Tensor, training: bool = False, trace: list | None = None) -> Tensor:
        cin = x.data.shape[-3]
        if cin != self.config.in_channels:
            raise ShapeError(
                f"model expects {self.config.in_channels} input channels, got {cin}"
            )
        h, w = x.data.shape[-2], x.data.shape[-1]
        if h % 4 or w % 4:
            raise ShapeError(
                f"input {h}x{w} not divisible by 4; resize inputs to multiples of 4"
            )

        def note(t):
            if trace is not None:
                trace.append(tuple(t.data.shape[-3:]))
            return t

        f1 = note(self.stem_bn(self.stem(x), training))
        skip1, down1 = self.enc1(f1, training)
        note(down1)
        skip2, down2 = self.enc2(down1, training)
        note(down2)
        refined = note(self.bottleneck(down2, training))
        up1 = note(self.dec1(refined, skip2, training))
        up2 = note(self.dec2(up1, skip1, training))
        mid = ad.relu(self.head_bn(self.head_mid(up2), training))
        prob = ad.sigmoid(self.head_out(mid))
        return note(ad.clip(prob, PRED_CLAMP, 1.0 - PRED_CLAMP))

    __call__ = forward


@dataclass
class ParamCount:
    total: int
    trainable: int
    non_trainable: int
    layers: list  # (name, shape, count, trainable flag)


def count_parameters(model: Module) -> ParamCount:
    layers = []
    trainable = 0
    non_trainable = 0
    for name, t in model.named_parameters():
        layers.append((name, tuple(t.data.shape), t.data.size, True))
        trainable += t.data.size
    for name, b in model.named_buffers():
        layers.append((name, tuple(b.shape), b.size, False))
        non_trainable += b.size
    return ParamCount(trainable + non_trainable, trainable, non_trainable, layers)


def shape_trace(model: MiniNet, height: int, width: int) -> list:
    """Intermediate (C, H, W) shapes of one forward pass on a zero image."""
    trace: list = []
    x = Tensor(np.zeros((model.config.in_channels, height, width), dtype=np.float32))
    with ad.no_grad():
        model.forward(x, training=False, trace=trace)
    return trace
