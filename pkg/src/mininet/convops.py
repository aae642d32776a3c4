"""Differentiable 2-D convolution, transposed convolution and batch norm.

Layout is channels-first: ``(C, H, W)`` or ``(N, C, H, W)``. Forward
accumulation orders are fixed and documented so that an independent naive
loop reproduces every output bit for bit:

* ``conv2d``: each output element accumulates float32 products over
  ``(c_in, k_row, k_col)`` in that order; the bias is added last.
* ``deconv2d``: scatter contributions accumulate over ``(c_in, k_row,
  k_col)`` outermost, input positions innermost; bias last.
* ``batchnorm2d``: per-channel mean and variance are exactly rounded
  float64 sums (``math.fsum``), which makes them independent of the
  enumeration order; normalization itself is elementwise float32 in the
  fixed sequence subtract, scale, scale-by-gamma, add-beta.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, record
from .errors import ShapeError

_ALLOWED_KERNELS = (1, 3, 5)

_update_stats = True


@contextmanager
def frozen_stats():
    """Batch-stat normalization without advancing running statistics.

    Used for the monitored validation loss, so a frozen model scores the
    same value every epoch regardless of running-stat warm-up.
    """
    global _update_stats
    prev = _update_stats
    _update_stats = False
    try:
        yield
    finally:
        _update_stats = prev


@dataclass(frozen=True)
class ConvSpec:
    """Static description of one convolution.

    ``padding=None`` selects "same" padding ``(k-1)//2``. Stride-1
    convolutions must preserve spatial extent, so explicit padding there
    has to equal the same-padding value. Transposed convolutions use
    ``output_padding = stride - 1``, which makes stride-2 kernels double
    the spatial extent exactly and stride-1 kernels preserve it.
    """

    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int | None = None
    depthwise: bool = False
    transposed: bool = False

    def __post_init__(self):
        if self.kernel_size not in _ALLOWED_KERNELS:
            raise ShapeError(
                f"kernel_size {self.kernel_size} unsupported, expected one of {_ALLOWED_KERNELS}"
            )
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError("channel counts must be positive")
        if self.stride < 1:
            raise ShapeError(f"stride must be positive, got {self.stride}")
        if self.transposed and self.stride not in (1, 2):
            raise ShapeError("transposed convolutions support stride 1 or 2 only")
        if self.padding is None:
            object.__setattr__(self, "padding", (self.kernel_size - 1) // 2)
        if self.padding < 0:
            raise ShapeError("padding must be non-negative")
        if self.stride == 1 and self.padding != (self.kernel_size - 1) // 2:
            raise ShapeError(
                f"stride-1 convolutions must use same padding {(self.kernel_size - 1) // 2}, "
                f"got {self.padding}"
            )
        if self.depthwise:
            if self.out_channels % self.in_channels != 0:
                raise ShapeError(
                    "depthwise convolution needs out_channels to be a multiple of "
                    f"in_channels, got {self.in_channels} -> {self.out_channels}"
                )

    @property
    def output_padding(self) -> int:
        return self.stride - 1 if self.transposed else 0

    @property
    def multiplier(self) -> int:
        return self.out_channels // self.in_channels if self.depthwise else 1

    def weight_shape(self) -> tuple:
        k = self.kernel_size
        if self.transposed:
            if self.depthwise:
                return (self.in_channels, self.multiplier, k, k)
            return (self.in_channels, self.out_channels, k, k)
        if self.depthwise:
            return (self.out_channels, 1, k, k)
        return (self.out_channels, self.in_channels, k, k)

    def out_spatial(self, h: int, w: int) -> tuple:
        k, s, p = self.kernel_size, self.stride, self.padding
        if self.transposed:
            return ((h - 1) * s - 2 * p + k + self.output_padding,
                    (w - 1) * s - 2 * p + k + self.output_padding)
        return ((h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)


def _lift(data):
    """Return (4-D view, had_batch_dim)."""
    if data.ndim == 3:
        return data[None], False
    if data.ndim == 4:
        return data, True
    raise ShapeError(f"expected a 3-D or 4-D tensor, got {data.ndim} dims")


def _check_conv_args(x, weights, bias, spec, op):
    x4, batched = _lift(x.data)
    if x4.shape[1] != spec.in_channels:
        raise ShapeError(
            f"{op}: input has {x4.shape[1]} channels, spec expects {spec.in_channels}"
        )
    if weights.data.shape != spec.weight_shape():
        raise ShapeError(
            f"{op}: weight shape {weights.data.shape} does not match spec "
            f"{spec.weight_shape()}"
        )
    if bias.data.shape != (spec.out_channels,):
        raise ShapeError(
            f"{op}: bias length {bias.data.shape} does not match out_channels "
            f"{spec.out_channels}"
        )
    h, w = x4.shape[2], x4.shape[3]
    if not spec.transposed and (h + 2 * spec.padding < spec.kernel_size
                                or w + 2 * spec.padding < spec.kernel_size):
        raise ShapeError(
            f"{op}: padded input {h}x{w} smaller than kernel {spec.kernel_size}"
        )
    ho, wo = spec.out_spatial(h, w)
    if ho < 1 or wo < 1:
        raise ShapeError(f"{op}: output spatial extent {ho}x{wo} is empty")
    return x4, batched, ho, wo


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, weights: Tensor, bias: Tensor, spec: ConvSpec) -> Tensor:
    """Cross-correlation with zero padding; differentiable in all inputs."""
    if spec.transposed:
        raise ShapeError("conv2d: spec is marked transposed, use deconv2d")
    x4, batched, ho, wo = _check_conv_args(x, weights, bias, spec, "conv2d")
    n = x4.shape[0]
    k, s, p = spec.kernel_size, spec.stride, spec.padding
    w = weights.data
    xp = np.pad(x4, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, spec.out_channels, ho, wo), dtype=np.float32)
    tmp = np.empty_like(out)

    if spec.depthwise:
        m = spec.multiplier
        for r in range(m):
            col = w[r::m, 0]  # (C_in, k, k)
            sub_out = out[:, r::m]
            sub_tmp = tmp[:, r::m]
            for kh in range(k):
                for kw in range(k):
                    sl = xp[:, :, kh:kh + s * ho:s, kw:kw + s * wo:s]
                    np.multiply(col[None, :, kh, kw, None, None], sl, out=sub_tmp)
                    sub_out += sub_tmp
    else:
        for ci in range(spec.in_channels):
            xs = xp[:, ci]
            for kh in range(k):
                for kw in range(k):
                    sl = xs[:, kh:kh + s * ho:s, kw:kw + s * wo:s]
                    np.multiply(w[None, :, ci, kh, kw, None, None],
                                sl[:, None], out=tmp)
                    out += tmp
    out += bias.data[None, :, None, None]

    def bw(g):
        g4 = g if g.ndim == 4 else g[None]
        gb = g4.sum(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)
        gw = np.zeros(w.shape, dtype=np.float64)
        gxp = np.zeros_like(xp)
        if spec.depthwise:
            m = spec.multiplier
            for kh in range(k):
                for kw in range(k):
                    sl = xp[:, :, kh:kh + s * ho:s, kw:kw + s * wo:s]
                    win = gxp[:, :, kh:kh + s * ho:s, kw:kw + s * wo:s]
                    for r in range(m):
                        gr = g4[:, r::m]
                        gw[r::m, 0, kh, kw] = np.einsum(
                            "nchw,nchw->c", gr, sl, dtype=np.float64)
                        win += w[r::m, 0, kh, kw][None, :, None, None] * gr
        else:
            for ci in range(spec.in_channels):
                win_all = gxp[:, ci]
                for kh in range(k):
                    for kw in range(k):
                        sl = xp[:, ci, kh:kh + s * ho:s, kw:kw + s * wo:s]
                        gw[:, ci, kh, kw] = np.einsum(
                            "nohw,nhw->o", g4, sl, dtype=np.float64)
                        win_all[:, kh:kh + s * ho:s, kw:kw + s * wo:s] += np.einsum(
                            "o,nohw->nhw", w[:, ci, kh, kw], g4)
        h, wd = x4.shape[2], x4.shape[3]
        gx = gxp[:, :, p:p + h, p:p + wd] if p else gxp
        if not batched:
            gx = gx[0]
        return gx.astype(np.float32, copy=False), gw.astype(np.float32), gb

    return record(out if batched else out[0], (x, weights, bias), bw)


# ---------------------------------------------------------------------------
# deconv2d (transposed convolution)
# ---------------------------------------------------------------------------


def deconv2d(x: Tensor, weights: Tensor, bias: Tensor, spec: ConvSpec) -> Tensor:
    """Transposed convolution (scatter-accumulate); the adjoint of conv2d."""
    if not spec.transposed:
        raise ShapeError("deconv2d: spec is not marked transposed")
    x4, batched, ho, wo = _check_conv_args(x, weights, bias, spec, "deconv2d")
    n, _, h, wd = x4.shape
    k, s, p = spec.kernel_size, spec.stride, spec.padding
    # scatter buffer; output-padding rows beyond kernel coverage stay zero
    hf, wf = (h - 1) * s + k, (wd - 1) * s + k
    hbuf, wbuf = max(hf, p + ho), max(wf, p + wo)
    w = weights.data
    full = np.zeros((n, spec.out_channels, hbuf, wbuf), dtype=np.float32)
    tmp = np.empty((n, spec.out_channels, h, wd), dtype=np.float32)

    if spec.depthwise:
        m = spec.multiplier
        for r in range(m):
            sub = tmp[:, r::m]
            for kh in range(k):
                for kw in range(k):
                    np.multiply(w[None, :, r, kh, kw, None, None], x4, out=sub)
                    full[:, r::m, kh:kh + s * h:s, kw:kw + s * wd:s] += sub
    else:
        for ci in range(spec.in_channels):
            xs = x4[:, ci]
            for kh in range(k):
                for kw in range(k):
                    np.multiply(w[None, ci, :, kh, kw, None, None],
                                xs[:, None], out=tmp)
                    full[:, :, kh:kh + s * h:s, kw:kw + s * wd:s] += tmp
    out = full[:, :, p:p + ho, p:p + wo].copy()
    out += bias.data[None, :, None, None]

    def bw(g):
        g4 = g if g.ndim == 4 else g[None]
        gb = g4.sum(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)
        gfull = np.zeros((n, spec.out_channels, hbuf, wbuf), dtype=np.float32)
        gfull[:, :, p:p + ho, p:p + wo] = g4
        gw = np.zeros(w.shape, dtype=np.float64)
        gx = np.zeros_like(x4)
        if spec.depthwise:
            m = spec.multiplier
            for r in range(m):
                for kh in range(k):
                    for kw in range(k):
                        win = gfull[:, r::m, kh:kh + s * h:s, kw:kw + s * wd:s]
                        gw[:, r, kh, kw] = np.einsum("nchw,nchw->c", x4, win,
                                                     dtype=np.float64)
                        gx += w[None, :, r, kh, kw, None, None] * win
        else:
            for ci in range(spec.in_channels):
                for kh in range(k):
                    for kw in range(k):
                        win = gfull[:, :, kh:kh + s * h:s, kw:kw + s * wd:s]
                        gw[ci, :, kh, kw] = np.einsum(
                            "nhw,nohw->o", x4[:, ci], win, dtype=np.float64)
                        gx[:, ci] += np.einsum("o,nohw->nhw", w[ci, :, kh, kw], win)
        if not batched:
            gx = gx[0]
        return gx.astype(np.float32, copy=False), gw.astype(np.float32), gb

    return record(out if batched else out[0], (x, weights, bias), bw)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


@dataclass
class BNState:
    """Running-statistic buffers of one batch norm layer (non-trainable)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        return cls(np.zeros(channels, dtype=np.float32),
                   np.ones(channels, dtype=np.float32), momentum, eps)


def _channel_stats_exact(x4):
    """Exactly rounded per-channel float64 mean and biased variance."""
    n, c, h, w = x4.shape
    m = n * h * w
    mean = np.empty(c, dtype=np.float64)
    var = np.empty(c, dtype=np.float64)
    for ch in range(c):
        vals = x4[:, ch].astype(np.float64).ravel()
        mu = math.fsum(vals.tolist()) / m
        d = vals - mu
        var[ch] = math.fsum((d * d).tolist()) / m
        mean[ch] = mu
    return mean, var


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BNState,
                training: bool) -> Tensor:
    """Per-channel normalization; train mode also updates running stats."""
    x4, batched = _lift(x.data)
    c = x4.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta)):
        if t.data.shape != (c,):
            raise ShapeError(
                f"batchnorm2d: {name} length {t.data.shape[0] if t.data.ndim else 0} "
                f"!= channel count {c}"
            )
    if state.running_mean.shape != (c,):
        raise ShapeError(
            f"batchnorm2d: running stats track {state.running_mean.shape[0]} "
            f"channels, input has {c}"
        )
    m = x4.shape[0] * x4.shape[2] * x4.shape[3]
    gam = gamma.data
    bet = beta.data

    if training:
        if m < 2:
            raise ShapeError(
                f"batchnorm2d: train mode needs at least 2 values per channel, got {m}"
            )
        mean64, var64 = _channel_stats_exact(x4)
        inv32 = (1.0 / np.sqrt(var64 + state.eps)).astype(np.float32)
        mean32 = mean64.astype(np.float32)
        if _update_stats:
            mom = np.float32(state.momentum)
            rem = np.float32(1.0) - mom
            state.running_mean[:] = mom * state.running_mean + rem * mean32
            state.running_var[:] = mom * state.running_var + rem * var64.astype(np.float32)
    else:
        mean32 = state.running_mean
        inv32 = (1.0 / np.sqrt(state.running_var.astype(np.float64) + state.eps)
                 ).astype(np.float32)

    xc = x4 - mean32[None, :, None, None]
    xhat = xc * inv32[None, :, None, None]
    y = xhat * gam[None, :, None, None]
    y += bet[None, :, None, None]

    if training:
        def bw(g):
            g4 = g if g.ndim == 4 else g[None]
            sum_g = g4.sum(axis=(0, 2, 3), dtype=np.float64)
            sum_gx = (g4 * xhat).sum(axis=(0, 2, 3), dtype=np.float64)
            coeff = (gam * inv32)[None, :, None, None]
            gx = coeff * (g4
                          - (sum_g / m).astype(np.float32)[None, :, None, None]
                          - xhat * (sum_gx / m).astype(np.float32)[None, :, None, None])
            if not batched:
                gx = gx[0]
            return (gx.astype(np.float32, copy=False),
                    sum_gx.astype(np.float32), sum_g.astype(np.float32))
    else:
        def bw(g):
            g4 = g if g.ndim == 4 else g[None]
            sum_g = g4.sum(axis=(0, 2, 3), dtype=np.float64)
            sum_gx = (g4 * xhat).sum(axis=(0, 2, 3), dtype=np.float64)
            gx = g4 * (gam * inv32)[None, :, None, None]
            if not batched:
                gx = gx[0]
            return (gx.astype(np.float32, copy=False),
                    sum_gx.astype(np.float32), sum_g.astype(np.float32))

    return record(y if batched else y[0], (x, gamma, beta), bw)
