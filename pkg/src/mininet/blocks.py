"""Parameterized layers and the dual multiscale residual block.

Modules register parameters and child modules in construction order, which
fixes the optimizer ordering, checkpoint layout and seeding, so identical
seeds rebuild bit-identical models.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .convops import BNState, ConvSpec, batchnorm2d, conv2d, deconv2d
from .errors import ShapeError


class Module:
    """Minimal container tracking parameters, buffers and children."""

    def __init__(self):
        self._params = {}
        self._buffers = {}
        self._children = {}

    def register_param(self, name: str, tensor: Tensor) -> Tensor:
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def register_buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        self._buffers[name] = array
        return array

    def register_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = ""):
        for name, t in self._params.items():
            yield prefix + name, t
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for t in self.parameters():
            t.zero_grad()


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Module):
    """Convolution layer (regular or transposed, per its spec)."""

    def __init__(self, spec: ConvSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        wshape = spec.weight_shape()
        # fan-in = incoming connections per output element
        k2 = spec.kernel_size ** 2
        fan_in = k2 if spec.depthwise else spec.in_channels * k2
        self.weight = self.register_param(
            "weight", Tensor(_kaiming_uniform(rng, wshape, fan_in)))
        self.bias = self.register_param(
            "bias", Tensor(np.zeros(spec.out_channels, dtype=np.float32)))

    def __call__(self, x: Tensor) -> Tensor:
        if self.spec.transposed:
            return deconv2d(x, self.weight, self.bias, self.spec)
        return conv2d(x, self.weight, self.bias, self.spec)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.gamma = self.register_param(
            "gamma", Tensor(np.ones(channels, dtype=np.float32)))
        self.beta = self.register_param(
            "beta", Tensor(np.zeros(channels, dtype=np.float32)))
        self.state = BNState.create(channels, momentum=momentum, eps=eps)
        self.register_buffer("running_mean", self.state.running_mean)
        self.register_buffer("running_var", self.state.running_var)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return batchnorm2d(x, self.gamma, self.beta, self.state, training)


class SepConv2d(Module):
    """Depthwise k x k followed by a pointwise 1 x 1 squeeze.

    ``expand`` widens the depthwise stage to expand*C channels before the
    pointwise squeeze maps back to C. With ``transposed`` the depthwise
    stage is a stride-1 transposed convolution (spatial-preserving).
    """

    def __init__(self, channels: int, kernel_size: int, rng: np.random.Generator,
                 expand: int = 1, transposed: bool = False):
        super().__init__()
        mid = channels * expand
        self.depthwise = self.register_child("dw", Conv2d(
            ConvSpec(channels, mid, kernel_size, depthwise=True,
                     transposed=transposed), rng))
        self.pointwise = self.register_child("pw", Conv2d(
            ConvSpec(mid, channels, 1), rng))

    def __call__(self, x: Tensor) -> Tensor:
        return self.pointwise(self.depthwise(x))


def _multiscale_conv(channels: int, kernel_size: int, rng,
                     depthwise: bool, expand: int, transposed: bool):
    if depthwise:
        return SepConv2d(channels, kernel_size, rng, expand=expand,
                         transposed=transposed)
    return Conv2d(ConvSpec(channels, channels, kernel_size,
                           transposed=transposed), rng)


class DMResBlock(Module):
    """Dual multiscale residual block: two stages of parallel 3x3/5x5
    branches with per-branch batch norm, a 1x1 residual refinement and a
    1x1 input projection summed into the output. Channel count and spatial
    extent are preserved.

    ``transposed_out``: the final multiscale pair runs as stride-1
    transposed convolutions (decoder variant).
    """

    def __init__(self, channels: int, rng: np.random.Generator,
                 depthwise: bool = True, squeeze_ratio: int = 1,
                 transposed_out: bool = False):
        super().__init__()
        if squeeze_ratio < 1:
            raise ShapeError(f"squeeze_ratio must be positive, got {squeeze_ratio}")
        self.channels = channels
        mk = lambda k, transposed=False: _multiscale_conv(
            channels, k, rng, depthwise, squeeze_ratio, transposed)
        self.branch3 = self.register_child("branch3", mk(3))
        self.bn3 = self.register_child("bn3", BatchNorm2d(channels))
        self.branch5 = self.register_child("branch5", mk(5))
        self.bn5 = self.register_child("bn5", BatchNorm2d(channels))
        self.refine = self.register_child("refine", Conv2d(
            ConvSpec(channels, channels, 1), rng))
        self.bn_refine = self.register_child("bn_refine", BatchNorm2d(channels))
        self.proj = self.register_child("proj", Conv2d(
            ConvSpec(channels, channels, 1), rng))
        self.bn_proj = self.register_child("bn_proj", BatchNorm2d(channels))
        out_transposed = transposed_out
        self.out3 = self.register_child("out3", mk(3, out_transposed))
        self.bn_out3 = self.register_child("bn_out3", BatchNorm2d(channels))
        self.out5 = self.register_child("out5", mk(5, out_transposed))
        self.bn_out5 = self.register_child("bn_out5", BatchNorm2d(channels))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.data.shape[-3] != self.channels:
            raise ShapeError(
                f"block built for {self.channels} channels, input has "
                f"{x.data.shape[-3]}"
            )
        stage1 = ad.relu(ad.add(self.bn3(self.branch3(x), training),
                                self.bn5(self.branch5(x), training)))
        stage2 = ad.relu(ad.add(self.bn_refine(self.refine(stage1), training),
                                stage1))
        fused = ad.add(self.bn_proj(self.proj(x), training),
                       self.bn_out3(self.out3(stage2), training))
        return ad.add(fused, self.bn_out5(self.out5(stage2), training))
