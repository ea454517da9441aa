"""Adam optimizer over named parameter tensors."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

__all__ = ["Adam"]


class Adam:
    """Adam with optional L2 weight decay added to the raw gradient.

    Matches the common convention where decay contributes ``wd * param`` to
    the gradient before the moment updates (not decoupled decay). When
    ``clip_norm`` is set, raw gradients are jointly rescaled so their global
    L2 norm does not exceed it, before decay and moment updates.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        clip_norm: float | None = None,
    ):
        if lr <= 0.0:
            raise ValueError(f"Adam: lr must be positive, got {lr}")
        if clip_norm is not None and clip_norm <= 0.0:
            raise ValueError(f"Adam: clip_norm must be positive, got {clip_norm}")
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._t = 0

    def _clip_scale(self) -> float:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float(np.sum(p.grad * p.grad))
        norm = np.sqrt(total)
        if norm <= self.clip_norm:
            return 1.0
        return self.clip_norm / norm

    def step(self) -> None:
        """Apply one update using the ``grad`` currently stored on each param."""
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        scale = self._clip_scale() if self.clip_norm is not None else 1.0
        for key, p in self.params.items():
            if p.grad is None:
                continue
            g = scale * p.grad if scale != 1.0 else p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self._m[key] = b1 * self._m[key] + (1.0 - b1) * g
            v = self._v[key] = b2 * self._v[key] + (1.0 - b2) * (g * g)
            m_hat = m / (1.0 - b1**self._t)
            v_hat = v / (1.0 - b2**self._t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
