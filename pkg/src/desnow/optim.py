"""Adam optimizer over a named weight collection."""

from __future__ import annotations

import numpy as np

from .descriptor import ModelWeights


class Adam:
    """Canonical Adam with bias correction; moments mirror parameter shapes
    and live in float32 like the parameters themselves."""

    def __init__(
        self,
        weights: ModelWeights,
        lr: float = 3e-5,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr < 0:
            raise ValueError("learning rate must be >= 0")
        self.weights = weights
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {n: np.zeros_like(t.data) for n, t in weights.items()}
        self._v = {n: np.zeros_like(t.data) for n, t in weights.items()}

    def zero_grad(self):
        self.weights.zero_grad()

    def step(self):
        """Apply one update from the accumulated gradients; parameters with
        no gradient this step are left untouched."""
        self.step_count += 1
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for name, p in self.weights.items():
            g = p.grad
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / c1
            v_hat = v / c2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)
