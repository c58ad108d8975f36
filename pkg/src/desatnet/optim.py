"""Adam optimizer for the autodiff engine."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class Adam:
    """Adam with bias correction (Kingma & Ba defaults).

    ``params`` is an iterable of Tensors with ``requires_grad``. Moment
    buffers live here, keyed by position, so the same instance must keep
    seeing the same parameter list.
    """

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params: list[Tensor] = list(params)
        if not all(isinstance(p, Tensor) and p.requires_grad for p in self.params):
            raise ValueError("Adam expects Tensors with requires_grad=True")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        """One update from current grads; params with grad None are skipped."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            m = self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            v = self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
