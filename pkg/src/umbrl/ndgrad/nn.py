"""Parameter containers, dense MLPs and the recurrent cell."""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator, Sequence

import numpy as np

from .tensor import Parameter, Tensor, concat, elu, matmul, sigmoid, tanh

ACTIVATIONS = ("elu", "tanh", "none")


class Module:
    """Base class; parameters are discovered from instance attributes."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        out = []
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                out.append((name, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Parameter):
                        out.append((f"{name}.{i}", item))
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], component: str = "") -> None:
        own = dict(self.named_parameters())
        label = component or type(self).__name__
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ValueError(
                f"{label}: parameter names differ (missing={missing}, unexpected={unexpected})"
            )
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"{label}: shape mismatch for {name}: {arr.shape} vs {p.data.shape}"
                )
            p.data = arr.copy()

    def copy_from(self, other: "Module") -> None:
        self.load_state_dict(other.state_dict())


@contextmanager
def frozen_graph(*modules: Module) -> Iterator[None]:
    """Temporarily stop recording gradients for the modules' parameters.

    Inputs can still carry gradients through the modules.
    """
    params = [p for m in modules if m is not None for p in m.parameters()]
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator):
        self.weight = Parameter(_glorot(rng, fan_in, fan_out), name="weight")
        self.bias = Parameter(np.zeros(fan_out), name="bias")

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias


def _activate(x: Tensor, kind: str) -> Tensor:
    if kind == "elu":
        return elu(x)
    if kind == "tanh":
        return tanh(x)
    return x


class DenseNet(Module):
    """Fully connected network over the last axis.

    ``widths`` lists every layer width including input and output, so
    ``DenseNet([4, 64, 64, 2])`` has two ELU hidden layers and a linear head.
    """

    def __init__(
        self,
        widths: Sequence[int],
        rng: np.random.Generator,
        activations: Sequence[str] | None = None,
        hidden_activation: str = "elu",
    ):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or any(w < 0 for w in widths):
            raise ValueError(f"bad layer widths {widths}")
        n = len(widths) - 1
        if activations is None:
            activations = [hidden_activation] * (n - 1) + ["none"]
        if len(activations) != n or any(a not in ACTIVATIONS for a in activations):
            raise ValueError(f"need {n} activations from {ACTIVATIONS}, got {activations}")
        self.widths = widths
        self.activations = list(activations)
        self.layers = [Linear(widths[i], widths[i + 1], rng) for i in range(n)]

    def __call__(self, x: Tensor) -> Tensor:
        for layer, act in zip(self.layers, self.activations):
            x = _activate(layer(x), act)
        return x


class GruCell(Module):
    """Single-matmul GRU variant used by discrete-latent world models.

    ``reset``, ``cand`` and ``update`` come from one affine map of
    ``[x, h]``; the candidate is ``tanh(reset * cand)`` and the update gate
    carries a -1 bias so early training leans on the previous state.
    """

    def __init__(self, input_width: int, hidden_width: int, rng: np.random.Generator):
        self.input_width = int(input_width)
        self.hidden_width = int(hidden_width)
        self.gates = Linear(self.input_width + self.hidden_width, 3 * self.hidden_width, rng)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        d = self.hidden_width
        parts = self.gates(concat([x, h], axis=-1))
        reset = sigmoid(parts[..., :d])
        cand = tanh(reset * parts[..., d : 2 * d])
        update = sigmoid(parts[..., 2 * d :] - 1.0)
        return update * cand + (1.0 - update) * h
