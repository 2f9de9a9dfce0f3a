"""Minimal layer containers on top of :mod:`nervesynth.tensor`."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Attribute-walking parameter container.

    Any :class:`Tensor` attribute counts as a parameter (trainable or frozen);
    sub-modules may be stored directly or in lists.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(val, Tensor):
                yield full, val
            elif isinstance(val, Module):
                yield from val.named_parameters(full + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def modules(self) -> Iterator[tuple[str, "Module"]]:
        stack: list[tuple[str, Module]] = [("", self)]
        while stack:
            path, mod = stack.pop(0)
            yield path, mod
            for name, val in vars(mod).items():
                if name.startswith("_"):
                    continue
                sub = f"{path}.{name}" if path else name
                if isinstance(val, Module):
                    stack.append((sub, val))
                elif isinstance(val, (list, tuple)):
                    stack.extend((f"{sub}.{i}", m) for i, m in enumerate(val) if isinstance(m, Module))

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self, trainable_only: bool = False) -> int:
        ps = self.trainable_parameters() if trainable_only else self.parameters()
        return int(sum(p.size for p in ps))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """``y = x W^T + b`` with ``W`` stored as ``[out, in]`` (d x k)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 role: str | None = None, init_scale: float = 1.0):
        bound = init_scale / np.sqrt(d_in)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(d_out, d_in)), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None
        self._role = role

    @property
    def role(self) -> str | None:
        return self._role

    def effective_weight(self) -> Tensor:
        return self.weight

    def forward(self, x: Tensor) -> Tensor:
        y = T.matmul(x, T.transpose(self.effective_weight()))
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self._eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self._eps)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        bound = 1.0 / np.sqrt(c_in * k * k)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(c_out, c_in, k, k)), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)
        self._stride = stride
        self._padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self._stride, self._padding)


def state_dict(module: Module) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in module.named_parameters()}


def load_state_dict(module: Module, state: dict[str, np.ndarray]) -> None:
    params = dict(module.named_parameters())
    missing = set(params) - set(state)
    if missing:
        raise KeyError(f"state is missing {sorted(missing)[:5]}")
    for name, p in params.items():
        arr = np.asarray(state[name], dtype=np.float64)
        if arr.shape != p.shape:
            raise T.ShapeError(f"{name}: expected {p.shape}, got {arr.shape}")
        p.data = arr.copy()
