"""Adam with bias correction, float32 state, deterministic updates."""

from __future__ import annotations

import numpy as np

from .errors import NumericError


class Adam:
    def __init__(self, named_params, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.named_params = list(named_params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(t.data) for _, t in self.named_params]
        self.v = [np.zeros_like(t.data) for _, t in self.named_params]

    def zero_grad(self):
        for _, t in self.named_params:
            t.zero_grad()

    def step(self):
        self.step_count += 1
        b1 = np.float32(self.beta1)
        b2 = np.float32(self.beta2)
        bc1 = np.float32(1.0 - self.beta1 ** self.step_count)
        bc2 = np.float32(1.0 - self.beta2 ** self.step_count)
        lr = np.float32(self.lr)
        eps = np.float32(self.eps)
        for i, (name, t) in enumerate(self.named_params):
            g = t.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient in parameter {name!r}")
            self.m[i] = b1 * self.m[i] + (np.float32(1.0) - b1) * g
            self.v[i] = b2 * self.v[i] + (np.float32(1.0) - b2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            t.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
