"""Adam with global-norm clipping and decoupled weight decay."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .tensor import Parameter


class Adam:
    """Bias-corrected Adam over a fixed parameter list.

    Each call to :meth:`step` clips the global gradient norm (over the
    non-frozen parameters) to ``clip``, applies ``p -= lr * weight_decay * p``
    and then the Adam update. Frozen parameters are left untouched.
    """

    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float,
        eps: float = 1e-5,
        weight_decay: float = 1e-6,
        clip: float = 100.0,
        betas: tuple[float, float] = (0.9, 0.999),
        name: str = "params",
    ):
        self.params = list(params)
        self.lr = float(lr)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.clip = float(clip)
        self.beta1, self.beta2 = betas
        self.name = name
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads: Mapping[Parameter, np.ndarray]) -> float:
        """Apply one update; returns the pre-clip global gradient norm."""
        active = [i for i, p in enumerate(self.params) if not p.frozen]
        gs = {}
        for i in active:
            p = self.params[i]
            if p not in grads:
                raise KeyError(f"{self.name}: no gradient for parameter {p.name!r}")
            g = np.asarray(grads[p], dtype=np.float64)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(
                    f"non-finite gradient in parameter group '{self.name}' (parameter {p.name!r})"
                )
            gs[i] = g
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in gs.values())))
        scale = self.clip / norm if norm > self.clip else 1.0
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for i, g in gs.items():
            p = self.params[i]
            if scale != 1.0:
                g = g * scale
            m = self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            v = self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                p.data = p.data - self.lr * self.weight_decay * p.data
            p.data = p.data - self.lr * update
        return norm
