"""Expand-reduce stack of group linear layers (DExTra).

A unit with depth ``N`` widens a ``d_m``-dimensional input towards
``d_max = round(m_w * d_m)`` over the first ``ceil(N/2)`` layers and narrows it
to ``d_o`` over the rest. Every layer after the first sees the block input
mixed group-wise with the (shuffled) output of the previous layer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational

import numpy as np

from .autodiff import Tensor, gelu
from .grouped import GroupLinear, feature_shuffle, input_mixer
from .nn import Module


class ConfigError(ValueError):
    """A configuration cannot be turned into a consistent layer plan."""


def round_half_up(x) -> int:
    return math.floor(Fraction(x) + Fraction(1, 2))


def as_fraction(x) -> Fraction:
    if isinstance(x, Rational):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    # floats from JSON: use the shortest decimal repr, not the binary expansion
    return Fraction(repr(float(x)))


def default_g_max(d_m: int) -> int:
    return math.ceil(d_m / 32)


@dataclass(frozen=True)
class DextraConfig:
    d_m: int
    d_o: int
    N: int
    m_w: Fraction = Fraction(2)
    g_max: int | None = None
    shuffle: bool = True

    def __post_init__(self):
        object.__setattr__(self, "m_w", as_fraction(self.m_w))
        if self.g_max is None:
            object.__setattr__(self, "g_max", default_g_max(self.d_m))
        if self.N < 2:
            raise ConfigError(f"DExTra depth must be >= 2, got N={self.N}")
        if self.m_w < 1:
            raise ConfigError(f"width multiplier must be >= 1, got {self.m_w}")
        if self.d_m < 1 or self.d_o < 1 or self.g_max < 1:
            raise ConfigError(f"invalid dims d_m={self.d_m}, d_o={self.d_o}, g_max={self.g_max}")

    @property
    def d_max(self) -> int:
        return round_half_up(self.m_w * self.d_m)


@dataclass(frozen=True)
class LayerSpec:
    index: int
    in_dim: int
    out_dim: int
    groups: int
    mixer: bool

    @property
    def params(self) -> int:
        return self.in_dim * self.out_dim // self.groups + self.out_dim


def group_schedule(N: int, g_max: int) -> list[int]:
    """Groups per layer: doubling up to ``g_max`` while expanding, mirrored while reducing.

    >>> group_schedule(8, 8)
    [1, 2, 4, 8, 8, 4, 2, 1]
    """
    if N < 2:
        raise ConfigError(f"DExTra depth must be >= 2, got N={N}")
    if g_max < 1:
        raise ConfigError(f"g_max must be >= 1, got {g_max}")
    half = math.ceil(N / 2)
    groups = [min(2 ** (l - 1), g_max) for l in range(1, half + 1)]
    for l in range(half + 1, N + 1):
        groups.append(groups[N - l])  # g^{N-l+1}, 1-based
    return groups


def width_schedule(cfg: DextraConfig, groups: list[int] | None = None) -> list[LayerSpec]:
    if groups is None:
        groups = group_schedule(cfg.N, cfg.g_max)
    N = cfg.N
    if len(groups) != N:
        raise ConfigError(f"expected {N} group counts, got {len(groups)}")
    bad = sorted({g for g in groups[1:] if cfg.d_m % g})
    if cfg.d_o % groups[-1]:
        bad = sorted(set(bad) | {groups[-1]})
    if bad:
        raise ConfigError(f"d_m={cfg.d_m} / d_o={cfg.d_o} not divisible by group counts {bad}")

    half = math.ceil(N / 2)
    d_max = cfg.d_max
    specs = []
    prev_out = 0
    for l in range(1, N + 1):
        if l == N:
            out = cfg.d_o
        else:
            if l <= half:
                target = cfg.d_m + (d_max - cfg.d_m) * Fraction(l, half)
            else:
                target = d_max + (cfg.d_o - d_max) * Fraction(l - half, N - half)
            unit = math.lcm(groups[l - 1], groups[l])
            out = max(unit, round_half_up(target / unit) * unit)
        in_dim = cfg.d_m if l == 1 else cfg.d_m + prev_out
        specs.append(LayerSpec(l, in_dim, out, groups[l - 1], mixer=l > 1))
        prev_out = out
    return specs


@dataclass(frozen=True)
class DextraPlan:
    config: DextraConfig
    layers: tuple[LayerSpec, ...] = field(default=())

    @classmethod
    def build(cls, cfg: DextraConfig) -> "DextraPlan":
        return cls(cfg, tuple(width_schedule(cfg)))

    @property
    def params(self) -> int:
        return sum(s.params for s in self.layers)

    @property
    def macs_per_token(self) -> int:
        return sum(s.in_dim * s.out_dim // s.groups for s in self.layers)


class Dextra(Module):
    def __init__(self, plan: DextraPlan, rng: np.random.Generator, scope: str = "dextra"):
        self.plan = plan
        self.layers = [
            GroupLinear(s.in_dim, s.out_dim, s.groups, rng, name=f"dextra layer {s.index}", scope=scope)
            for s in plan.layers
        ]

    @classmethod
    def from_config(cls, cfg: DextraConfig, rng: np.random.Generator) -> "Dextra":
        return cls(DextraPlan.build(cfg), rng)

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.plan.config
        if x.shape[-1] != cfg.d_m:
            raise ValueError(f"DExTra expects last dim {cfg.d_m}, got {x.shape[-1]}")
        y = self.layers[0](x)
        for prev, layer in zip(self.layers, self.layers[1:]):
            y = gelu(y)
            if cfg.shuffle and prev.groups > 1 and layer.groups > 1:
                y = feature_shuffle(y, prev.groups)
            y = layer(input_mixer(x, y, layer.groups, prev.groups))
        return y
