"""Module container and the dense building blocks shared by every layer."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .autodiff import Tensor, layer_norm, mac_scope, matmul


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = math.sqrt(1.0 / fan_in)
    return parameter(rng.uniform(-bound, bound, size=shape))


class Module:
    """Attribute-based parameter container.

    Parameters are tensors with ``requires_grad`` stored as attributes, either
    directly, inside child modules, or inside lists of child modules. Names are
    dotted attribute paths in assignment order, so the store is ordered and
    stable across runs.
    """

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        unexpected = state.keys() - own.keys()
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=p.data.dtype)
            if value.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()


class Linear(Module):
    """Dense affine map ``x @ W + b`` with ``W`` of shape (in_dim, out_dim)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True,
                 scope: str = "linear"):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.scope = scope
        self.weight = uniform_init(rng, (in_dim, out_dim), in_dim)
        self.bias = uniform_init(rng, (out_dim,), in_dim) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"Linear({self.in_dim}->{self.out_dim}) got input with last dim {x.shape[-1]}")
        with mac_scope(self.scope):
            y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.dim = dim
        self.eps = eps
        self.gain = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)
