"""Central finite-difference checks against the tape."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, backward, no_grad


def grad_check_fn(
    loss_fn: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-5
) -> float:
    """Max relative error between autodiff and central differences.

    ``loss_fn`` must rebuild the scalar loss from scratch on every call and
    be deterministic (reseed any sampling inside it).
    """
    if not 0.0 < eps <= 1e-3:
        raise ValueError(f"eps must lie in (0, 1e-3], got {eps}")
    analytic = backward(loss_fn(), params)
    worst = 0.0
    with no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            ga = analytic[p].reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + eps
                up = loss_fn().item()
                flat[j] = orig - eps
                down = loss_fn().item()
                flat[j] = orig
                num = (up - down) / (2.0 * eps)
                denom = max(abs(ga[j]), abs(num), 1e-8)
                worst = max(worst, abs(ga[j] - num) / denom)
    return worst


def grad_check(net, inputs, eps: float = 1e-5) -> float:
    """Check a network's parameter gradients on ``L = 0.5 * sum(net(*inputs)**2)``."""
    if not isinstance(inputs, (tuple, list)):
        inputs = (inputs,)
    inputs = tuple(x if isinstance(x, Tensor) else Tensor(np.asarray(x)) for x in inputs)

    def loss():
        out = net(*inputs)
        return (out * out).sum() * 0.5

    return grad_check_fn(loss, net.parameters(), eps)
