"""Central finite-difference audit for differentiable operators.

``grad_check`` runs an operator twice: once through the tape to collect
analytic gradients, then entry by entry with symmetric perturbations to
build a numeric estimate. Failures are data (reported rows), not errors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, backward, tsum

DEFAULT_STEP = 1e-3


@dataclass
class GradCheckRow:
    name: str
    max_rel_err: float
    checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance


@dataclass
class GradCheckReport:
    rows: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def format_table(self) -> str:
        lines = [f"{'tensor':<32} {'entries':>7} {'max rel err':>12} {'tol':>8}  result"]
        for r in self.rows:
            verdict = "pass" if r.passed else "FAIL"
            lines.append(
                f"{r.name:<32} {r.checked:>7} {r.max_rel_err:>12.3e} "
                f"{r.tolerance:>8.0e}  {verdict}"
            )
        return "\n".join(lines)


def _rel_err(analytic, numeric):
    # tensor-level error: worst absolute gap against the larger magnitude,
    # floored so near-zero gradients do not divide by noise
    gap = float(np.max(np.abs(analytic - numeric))) if analytic.size else 0.0
    denom = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-3)
    return gap / denom


def numeric_gradient(fn, tensor: Tensor, h: float = DEFAULT_STEP,
                     indices=None) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. ``tensor`` entries.

    ``fn`` must recompute the forward pass from the current tensor data.
    Only ``indices`` (flat) are probed when given; other entries stay 0.
    """
    flat = tensor.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    probe = range(flat.size) if indices is None else indices
    for i in probe:
        orig = flat[i]
        flat[i] = orig + np.float32(h)
        f_plus = float(fn().data)
        flat[i] = orig - np.float32(h)
        f_minus = float(fn().data)
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(tensor.data.shape)


def grad_check(fn, named_tensors, tolerance: float = 1e-2,
               h: float = DEFAULT_STEP, max_entries: int | None = None,
               seed: int = 0) -> GradCheckReport:
    """Compare analytic and numeric gradients of ``fn`` for each tensor.

    ``fn`` evaluates the operator under test and returns a scalar Tensor
    (wrap non-scalar ops in a sum). ``named_tensors`` is a list of
    ``(name, Tensor)`` pairs with ``requires_grad`` set. When a tensor has
    more than ``max_entries`` elements, a seeded subset is probed.
    """
    for _, t in named_tensors:
        t.zero_grad()
    out = fn()
    if out.data.shape != ():
        out = tsum(out)
    backward(out)
    analytic = {name: (t.grad.copy() if t.grad is not None
                       else np.zeros_like(t.data))
                for name, t in named_tensors}

    rng = np.random.default_rng(seed)
    rows = []
    for name, t in named_tensors:
        size = t.data.size
        if max_entries is not None and size > max_entries:
            idx = np.sort(rng.choice(size, size=max_entries, replace=False))
        else:
            idx = np.arange(size)
        numeric = numeric_gradient(fn, t, h=h, indices=idx)
        ana = analytic[name].reshape(-1)[idx]
        num = numeric.reshape(-1)[idx]
        rows.append(GradCheckRow(name, _rel_err(ana, num), len(idx), tolerance))
    return GradCheckReport(rows)


def audit_suite(seed: int = 0) -> GradCheckReport:
    """Finite-difference audit of every differentiable operator plus a
    sampled end-to-end check (small graph, Dice loss)."""
    from . import autodiff as ad
    from .convops import BNState, ConvSpec, batchnorm2d, conv2d, deconv2d
    from .losses import bce_loss, dice_loss, jaccard_loss
    from .model import MiniNet, ModelConfig

    rng = np.random.default_rng(seed)
    rows = []

    def run(prefix, fn, tensors, tol=1e-2, max_entries=None, h=DEFAULT_STEP):
        report = grad_check(fn, tensors, tolerance=tol, max_entries=max_entries,
                            seed=seed, h=h)
        for row in report.rows:
            rows.append(GradCheckRow(f"{prefix}.{row.name}", row.max_rel_err,
                                     row.checked, row.tolerance))

    def tensor(shape, lo=-1.0, hi=1.0):
        return Tensor(rng.uniform(lo, hi, size=shape).astype(np.float32),
                      requires_grad=True)

    conv_cases = [
        ("conv3x3", ConvSpec(2, 3, 3), (2, 5, 5)),
        ("conv1x1", ConvSpec(2, 2, 1), (2, 4, 4)),
        ("conv5x5", ConvSpec(1, 2, 5), (1, 6, 6)),
        ("conv3x3_s2", ConvSpec(2, 3, 3, stride=2, padding=1), (2, 6, 6)),
        ("conv3x3_dw", ConvSpec(3, 3, 3, depthwise=True), (3, 5, 5)),
    ]
    for name, spec, xshape in conv_cases:
        x = tensor(xshape)
        w = tensor(spec.weight_shape())
        b = tensor((spec.out_channels,))
        run(name, lambda x=x, w=w, b=b, spec=spec: tsum(conv2d(x, w, b, spec)),
            [("x", x), ("w", w), ("b", b)])

    deconv_cases = [
        ("deconv3x3_s2", ConvSpec(2, 3, 3, stride=2, padding=1, transposed=True),
         (2, 3, 3)),
        ("deconv3x3_s1", ConvSpec(2, 2, 3, transposed=True), (2, 4, 4)),
        ("deconv5x5_dw", ConvSpec(2, 2, 5, depthwise=True, transposed=True),
         (2, 4, 4)),
    ]
    for name, spec, xshape in deconv_cases:
        x = tensor(xshape)
        w = tensor(spec.weight_shape())
        b = tensor((spec.out_channels,))
        run(name, lambda x=x, w=w, b=b, spec=spec: tsum(deconv2d(x, w, b, spec)),
            [("x", x), ("w", w), ("b", b)])

    for mode_name, training in (("batchnorm_train", True), ("batchnorm_eval", False)):
        x = tensor((2, 2, 3, 3))
        gamma = tensor((2,), 0.5, 1.5)
        beta = tensor((2,), -0.5, 0.5)
        state = BNState.create(2)
        state.running_mean[:] = rng.uniform(-0.3, 0.3, size=2).astype(np.float32)
        state.running_var[:] = rng.uniform(0.5, 1.5, size=2).astype(np.float32)
        # plain sum(BN(x)) is constant in x; weight it to probe the jacobian
        coeffs = Tensor(rng.uniform(0.5, 1.5, size=(2, 2, 3, 3)).astype(np.float32))
        run(mode_name,
            lambda x=x, g=gamma, b=beta, s=state, t=training, c=coeffs:
                tsum(ad.mul(batchnorm2d(x, g, b, s, t), c)),
            [("x", x), ("gamma", gamma), ("beta", beta)])

    x = Tensor(np.where(rng.uniform(-1, 1, 12) >= 0,
                        rng.uniform(0.1, 1.0, 12),
                        rng.uniform(-1.0, -0.1, 12)).astype(np.float32),
               requires_grad=True)
    run("relu", lambda x=x: tsum(ad.relu(x)), [("x", x)])
    x = tensor((10,), -3.0, 3.0)
    run("sigmoid", lambda x=x: tsum(ad.sigmoid(x)), [("x", x)], tol=1e-3)
    a, b = tensor((6,)), tensor((6,))
    run("add", lambda a=a, b=b: tsum(ad.add(a, b)), [("a", a), ("b", b)])
    run("mul", lambda a=a, b=b: tsum(ad.mul(a, b)), [("a", a), ("b", b)])
    x = tensor((3, 4))
    run("sum", lambda x=x: tsum(x), [("x", x)])

    target = Tensor((rng.uniform(0, 1, 8) > 0.5).astype(np.float32))
    pred = Tensor(rng.uniform(0.1, 0.9, 8).astype(np.float32), requires_grad=True)
    run("dice_loss", lambda p=pred, t=target: dice_loss(p, t),
        [("pred", pred)], tol=1e-3)
    run("jaccard_loss", lambda p=pred, t=target: jaccard_loss(p, t),
        [("pred", pred)], tol=1e-3)
    run("bce_loss", lambda p=pred, t=target: bce_loss(p, t),
        [("pred", pred)], tol=1e-3)

    model = MiniNet(ModelConfig(), seed=seed)
    image = Tensor(rng.uniform(0, 1, (3, 8, 8)).astype(np.float32))
    mask = Tensor((rng.uniform(0, 1, (1, 8, 8)) > 0.5).astype(np.float32))
    # smaller step: relu kink crossings dominate the difference at h=1e-3
    run("end_to_end",
        lambda m=model, i=image, t=mask: dice_loss(m.forward(i, training=True), t),
        [("stem.weight", model.stem.weight)], tol=2e-2, max_entries=48, h=1e-4)

    return GradCheckReport(rows)
