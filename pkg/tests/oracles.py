"""Independent reference implementations used as test oracles.

Everything here is written as straight-line/nested-loop code, separate
from the package's vectorized paths. Convolution oracles accumulate in
float32 in (c_in, k_row, k_col) order; batch-norm statistics use
``math.fsum`` (exactly rounded, order-independent); loss formulas are
float64 transcriptions.
"""

import math

import numpy as np


def naive_conv2d(x, w, b, stride=1, padding=0, depthwise=False):
    batched = x.ndim == 4
    x4 = (x if batched else x[None]).astype(np.float32)
    n_, cin, h, wd = x4.shape
    cout, k = w.shape[0], w.shape[2]
    mult = cout // cin if depthwise else 0
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    xp = np.pad(x4, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n_, cout, ho, wo), dtype=np.float32)
    for n in range(n_):
        for co in range(cout):
            for oh in range(ho):
                for ow in range(wo):
                    acc = np.float32(0.0)
                    if depthwise:
                        ci = co // mult
                        for kh in range(k):
                            for kw in range(k):
                                acc += w[co, 0, kh, kw] * xp[
                                    n, ci, oh * stride + kh, ow * stride + kw]
                    else:
                        for ci in range(cin):
                            for kh in range(k):
                                for kw in range(k):
                                    acc += w[co, ci, kh, kw] * xp[
                                        n, ci, oh * stride + kh, ow * stride + kw]
                    out[n, co, oh, ow] = acc + b[co]
    return out if batched else out[0]


def naive_deconv2d(x, w, b, stride=2, padding=1, output_padding=None,
                   depthwise=False):
    batched = x.ndim == 4
    x4 = (x if batched else x[None]).astype(np.float32)
    n_, cin, h, wd = x4.shape
    k = w.shape[2]
    cout = cin * w.shape[1] if depthwise else w.shape[1]
    if output_padding is None:
        output_padding = stride - 1
    ho = (h - 1) * stride - 2 * padding + k + output_padding
    wo = (wd - 1) * stride - 2 * padding + k + output_padding
    hf, wf = (h - 1) * stride + k, (wd - 1) * stride + k
    buf = np.zeros((n_, cout, max(hf, padding + ho), max(wf, padding + wo)),
                   dtype=np.float32)
    for n in range(n_):
        if depthwise:
            for c in range(cout):
                ci, r = divmod(c, w.shape[1])
                for kh in range(k):
                    for kw in range(k):
                        for ih in range(h):
                            for iw in range(wd):
                                buf[n, c, ih * stride + kh, iw * stride + kw] += \
                                    w[ci, r, kh, kw] * x4[n, ci, ih, iw]
        else:
            for ci in range(cin):
                for co in range(cout):
                    for kh in range(k):
                        for kw in range(k):
                            for ih in range(h):
                                for iw in range(wd):
                                    buf[n, co, ih * stride + kh, iw * stride + kw] += \
                                        w[ci, co, kh, kw] * x4[n, ci, ih, iw]
    out = buf[:, :, padding:padding + ho, padding:padding + wo].copy()
    for co in range(cout):
        out[:, co] = out[:, co] + b[co]
    return out if batched else out[0]


def exact_channel_stats(x4):
    n, c, h, w = x4.shape
    m = n * h * w
    means, variances = [], []
    for ch in range(c):
        vals = x4[:, ch].astype(np.float64).ravel()
        mu = math.fsum(vals.tolist()) / m
        variances.append(math.fsum(((vals - mu) ** 2).tolist()) / m)
        means.append(mu)
    return np.array(means), np.array(variances)


def naive_batchnorm_train(x, gamma, beta, eps=1e-5):
    """Returns (y, mean32, var32) without touching any running state."""
    batched = x.ndim == 4
    x4 = (x if batched else x[None]).astype(np.float32)
    mean64, var64 = exact_channel_stats(x4)
    mean32 = mean64.astype(np.float32)
    inv32 = (1.0 / np.sqrt(var64 + eps)).astype(np.float32)
    y = np.empty_like(x4)
    n_, c, h, w = x4.shape
    for n in range(n_):
        for ch in range(c):
            for i in range(h):
                for j in range(w):
                    xc = x4[n, ch, i, j] - mean32[ch]
                    xh = xc * inv32[ch]
                    y[n, ch, i, j] = xh * gamma[ch] + beta[ch]
    return (y if batched else y[0]), mean32, var64.astype(np.float32)


def naive_batchnorm_eval(x, gamma, beta, running_mean, running_var, eps=1e-5):
    batched = x.ndim == 4
    x4 = (x if batched else x[None]).astype(np.float32)
    inv32 = (1.0 / np.sqrt(running_var.astype(np.float64) + eps)).astype(np.float32)
    y = np.empty_like(x4)
    n_, c, h, w = x4.shape
    for n in range(n_):
        for ch in range(c):
            for i in range(h):
                for j in range(w):
                    xc = x4[n, ch, i, j] - running_mean[ch]
                    xh = xc * inv32[ch]
                    y[n, ch, i, j] = xh * gamma[ch] + beta[ch]
    return y if batched else y[0]


def running_update(old, new, momentum=0.9):
    return (np.float32(momentum) * old.astype(np.float32)
            + (np.float32(1.0) - np.float32(momentum)) * new.astype(np.float32))


# ---------------------------------------------------------------------------
# Loss formulas (float64) and finite differences
# ---------------------------------------------------------------------------


def dice_formula(pred, target, smoothing=1.0):
    p = pred.astype(np.float64)
    t = target.astype(np.float64)
    return 1.0 - (2.0 * (p * t).sum() + smoothing) / (p.sum() + t.sum() + smoothing)


def dice_literal_formula(pred, target, smoothing=1.0):
    p = pred.astype(np.float64)
    t = target.astype(np.float64)
    if p.ndim < 4:
        p, t = p[None], t[None]
    total = 0.0
    for i in range(p.shape[0]):
        ratio = ((p[i] * t[i]).sum() + smoothing) / (p[i].sum() + t[i].sum() + smoothing)
        total += (1.0 - ratio) ** 2
    return total


def jaccard_formula(pred, target, smoothing=1.0):
    p = pred.astype(np.float64)
    t = target.astype(np.float64)
    inter = (p * t).sum()
    union = p.sum() + t.sum() - inter
    return 1.0 - (inter + smoothing) / (union + smoothing)


def bce_formula(pred, target, clamp=1e-7):
    p = np.clip(pred.astype(np.float64), clamp, 1.0 - clamp)
    t = target.astype(np.float64)
    return float(-(t * np.log(p) + (1 - t) * np.log(1 - p)).mean())


def fd_gradient(fn, arr, h=1e-4):
    """Central differences of a float64 scalar function of one array."""
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = fn(arr)
        flat[i] = orig - h
        minus = fn(arr)
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * h)
    return grad


# ---------------------------------------------------------------------------
# Adam recurrence transcription (float32, matches the optimizer's dtype)
# ---------------------------------------------------------------------------


def adam_trajectory(theta0, grad_fn, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    theta = np.float32(theta0)
    m = np.float32(0.0)
    v = np.float32(0.0)
    out = []
    for t in range(1, steps + 1):
        g = np.float32(grad_fn(theta))
        m = np.float32(beta1) * m + (np.float32(1) - np.float32(beta1)) * g
        v = np.float32(beta2) * v + (np.float32(1) - np.float32(beta2)) * (g * g)
        m_hat = m / np.float32(1.0 - beta1 ** t)
        v_hat = v / np.float32(1.0 - beta2 ** t)
        theta = theta - np.float32(lr) * m_hat / (np.sqrt(v_hat) + np.float32(eps))
        out.append(float(theta))
    return out


# ---------------------------------------------------------------------------
# Straight-line block reference built on the naive primitives
# ---------------------------------------------------------------------------


def _ref_conv_module(mod, x):
    spec = mod.spec
    w = mod.weight.data
    b = mod.bias.data
    if spec.transposed:
        return naive_deconv2d(x, w, b, stride=spec.stride, padding=spec.padding,
                              output_padding=spec.output_padding,
                              depthwise=spec.depthwise)
    return naive_conv2d(x, w, b, stride=spec.stride, padding=spec.padding,
                        depthwise=spec.depthwise)


def _ref_multiscale(mod, x):
    if hasattr(mod, "depthwise"):  # separable pair
        return _ref_conv_module(mod.pointwise, _ref_conv_module(mod.depthwise, x))
    return _ref_conv_module(mod, x)


def _ref_bn_train(mod, x):
    y, _, _ = naive_batchnorm_train(x, mod.gamma.data, mod.beta.data,
                                    eps=mod.state.eps)
    return y


def reference_block(block, x):
    """Train-mode forward of a DMResBlock via the naive primitives."""
    relu = lambda a: np.where(a > 0, a, np.float32(0.0))
    stage1 = relu(_ref_bn_train(block.bn3, _ref_multiscale(block.branch3, x))
                  + _ref_bn_train(block.bn5, _ref_multiscale(block.branch5, x)))
    stage2 = relu(_ref_bn_train(block.bn_refine,
                                _ref_conv_module(block.refine, stage1)) + stage1)
    out = (_ref_bn_train(block.bn_proj, _ref_conv_module(block.proj, x))
           + _ref_bn_train(block.bn_out3, _ref_multiscale(block.out3, stage2)))
    return out + _ref_bn_train(block.bn_out5, _ref_multiscale(block.out5, stage2))


def reference_decoder(stage, x, skip):
    d = _ref_conv_module(stage.up, x)
    return skip + reference_block(stage.block, d)


# ---------------------------------------------------------------------------
# Closed-form parameter count
# ---------------------------------------------------------------------------


def param_count_formula(in_channels=3, base_width=8, depthwise=True,
                        squeeze_ratio=1):
    """(total, trainable, non_trainable) for the default architecture,
    derived from the layer inventory without touching the model code."""

    def conv(cout, cin_eff, k):
        return cout * cin_eff * k * k + cout  # weight + bias

    def sep(c, k, r):
        return conv(r * c, 1, k) + conv(c, r * c, 1)  # depthwise + pointwise

    def branch(c, k):
        return sep(c, k, squeeze_ratio) if depthwise else conv(c, c, k)

    def bn(c):
        return 2 * c, 2 * c  # (gamma+beta, running mean+var)

    trainable = 0
    buffers = 0

    def add_bn(c):
        nonlocal trainable, buffers
        t, nb = bn(c)
        trainable += t
        buffers += nb

    def add_block(c):
        nonlocal trainable
        trainable += branch(c, 3) + branch(c, 5)       # first multiscale pair
        add_bn(c); add_bn(c)
        trainable += conv(c, c, 1); add_bn(c)          # refinement
        trainable += conv(c, c, 1); add_bn(c)          # input projection
        trainable += branch(c, 3) + branch(c, 5)       # final multiscale pair
        add_bn(c); add_bn(c)

    b = base_width
    trainable += conv(b, in_channels, 3); add_bn(b)    # stem
    add_block(b); trainable += conv(2 * b, b, 3)       # encoder 1
    add_block(2 * b); trainable += conv(4 * b, 2 * b, 3)  # encoder 2
    add_block(4 * b)                                   # bottleneck
    trainable += conv(2 * b, 4 * b, 3); add_block(2 * b)  # decoder 1
    trainable += conv(b, 2 * b, 3); add_block(b)       # decoder 2
    trainable += conv(in_channels, b, 1); add_bn(in_channels)  # head mid
    trainable += conv(1, in_channels, 1)               # head out
    return trainable + buffers, trainable, buffers
