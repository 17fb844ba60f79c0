"""DeLighT encoder/decoder blocks: DExTra, single-head attention, light-weight FFN."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .autodiff import Tensor, dropout, gelu, mac_scope, matmul, softmax
from .dextra import ConfigError, Dextra, DextraConfig, DextraPlan, as_fraction
from .nn import LayerNorm, Linear, Module


@dataclass(frozen=True)
class BlockConfig:
    d_m: int
    N: int
    m_w: Fraction = Fraction(2)
    d_o: int | None = None
    r: Fraction = Fraction(4)
    dropout: float = 0.0
    g_max: int | None = None
    shuffle: bool = True

    def __post_init__(self):
        object.__setattr__(self, "m_w", as_fraction(self.m_w))
        object.__setattr__(self, "r", as_fraction(self.r))
        if self.d_o is None:
            object.__setattr__(self, "d_o", self.d_m // 2)
        if not 1 <= self.d_o < self.d_m:
            raise ConfigError(f"attention dim d_o={self.d_o} must satisfy 1 <= d_o < d_m={self.d_m}")
        if self.r <= 0:
            raise ConfigError(f"reduction factor must be positive, got r={self.r}")
        if self.d_m / self.r < 1:
            raise ConfigError(f"light FFN inner width d_m/r = {self.d_m}/{self.r} is below 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def ffn_dim(self) -> int:
        inner = Fraction(self.d_m) / self.r
        if inner.denominator != 1:
            warnings.warn(f"d_m/r = {self.d_m}/{self.r} is not integral; using floor {math.floor(inner)}",
                          stacklevel=2)
        return math.floor(inner)

    def dextra_config(self) -> DextraConfig:
        return DextraConfig(self.d_m, self.d_o, self.N, self.m_w, self.g_max, self.shuffle)


def causal_mask(n_q: int, n_k: int | None = None) -> np.ndarray:
    """Additive mask: ``-inf`` where key index > query index."""
    n_k = n_q if n_k is None else n_k
    future = np.triu(np.ones((n_q, n_k), dtype=bool), k=1 + n_k - n_q)
    return np.where(future, -np.inf, 0.0)


def padding_mask(key_padding: np.ndarray) -> np.ndarray:
    """(batch, n_k) boolean pad flags -> additive (batch, 1, n_k) mask."""
    return np.where(np.asarray(key_padding, dtype=bool), -np.inf, 0.0)[:, None, :]


def single_head_attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = False,
                          key_padding: np.ndarray | None = None, dropout_p: float = 0.0,
                          training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d_o)) v over the last two axes."""
    d_o = q.shape[-1]
    if k.shape[-1] != d_o or v.shape[-2] != k.shape[-2]:
        raise ValueError(f"attention shape mismatch: q={q.shape} k={k.shape} v={v.shape}")
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d_o))
    if causal:
        scores = scores + causal_mask(q.shape[-2], k.shape[-2])
    if key_padding is not None:
        scores = scores + padding_mask(key_padding)
    weights = dropout(softmax(scores, axis=-1), dropout_p, training, rng)
    return matmul(weights, v)


class LightFFN(Module):
    """d_m -> d_m/r -> d_m with GELU in between."""

    def __init__(self, d_m: int, inner: int, rng: np.random.Generator, dropout_p: float = 0.0):
        if inner < 1:
            raise ConfigError(f"light FFN inner width must be >= 1, got {inner}")
        self.reduce = Linear(d_m, inner, rng, scope="ffn")
        self.expand = Linear(inner, d_m, rng, scope="ffn")
        self.dropout_p = dropout_p
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        h = dropout(gelu(self.reduce(x)), self.dropout_p, self.training, self.rng)
        return self.expand(h)


class SelfAttention(Module):
    """DExTra to d_o, three parallel d_o->d_o projections, attention, projection back to d_m."""

    def __init__(self, cfg: BlockConfig, rng: np.random.Generator, causal: bool):
        self.causal = causal
        self.dropout_p = cfg.dropout
        self.rng = rng
        self.dextra = Dextra(DextraPlan.build(cfg.dextra_config()), rng)
        self.query = Linear(cfg.d_o, cfg.d_o, rng, scope="attn_proj")
        self.key = Linear(cfg.d_o, cfg.d_o, rng, scope="attn_proj")
        self.value = Linear(cfg.d_o, cfg.d_o, rng, scope="attn_proj")
        self.out = Linear(cfg.d_o, cfg.d_m, rng, scope="attn_proj")

    def forward(self, x: Tensor, key_padding: np.ndarray | None = None) -> Tensor:
        h = self.dextra(x)
        q, k, v = self.query(h), self.key(h), self.value(h)
        with mac_scope("attention"):
            a = single_head_attention(q, k, v, self.causal, key_padding, self.dropout_p, self.training, self.rng)
        return self.out(a)


class CrossAttention(Module):
    """Source-target attention: queries from the decoder stream, keys/values from the encoder output."""

    def __init__(self, cfg: BlockConfig, rng: np.random.Generator):
        self.dropout_p = cfg.dropout
        self.rng = rng
        self.query = Linear(cfg.d_m, cfg.d_o, rng, scope="cross_proj")
        self.key = Linear(cfg.d_m, cfg.d_o, rng, scope="cross_proj")
        self.value = Linear(cfg.d_m, cfg.d_o, rng, scope="cross_proj")
        self.out = Linear(cfg.d_o, cfg.d_m, rng, scope="cross_proj")

    def project_memory(self, memory: Tensor) -> tuple[Tensor, Tensor]:
        return self.key(memory), self.value(memory)

    def forward(self, x: Tensor, memory_kv: tuple[Tensor, Tensor],
                memory_padding: np.ndarray | None = None) -> Tensor:
        k, v = memory_kv
        q = self.query(x)
        with mac_scope("cross_attention"):
            a = single_head_attention(q, k, v, False, memory_padding, self.dropout_p, self.training, self.rng)
        return self.out(a)


class EncoderBlock(Module):
    """Pre-norm block: x + SelfAttention(LN(x)), then + LightFFN(LN(.)).

    With ``causal=True`` this is the decoder-only (language model) block.
    """

    def __init__(self, cfg: BlockConfig, rng: np.random.Generator, causal: bool = False):
        self.cfg = cfg
        self.attn_norm = LayerNorm(cfg.d_m)
        self.attn = SelfAttention(cfg, rng, causal)
        self.ffn_norm = LayerNorm(cfg.d_m)
        self.ffn = LightFFN(cfg.d_m, cfg.ffn_dim, rng, cfg.dropout)

    def forward(self, x: Tensor, key_padding: np.ndarray | None = None) -> Tensor:
        x = x + self.attn(self.attn_norm(x), key_padding)
        return x + self.ffn(self.ffn_norm(x))


class DecoderBlock(Module):
    """Causal self-attention, source-target attention, then the light FFN; all pre-norm residual."""

    def __init__(self, cfg: BlockConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.attn_norm = LayerNorm(cfg.d_m)
        self.attn = SelfAttention(cfg, rng, causal=True)
        self.cross_norm = LayerNorm(cfg.d_m)
        self.cross = CrossAttention(cfg, rng)
        self.ffn_norm = LayerNorm(cfg.d_m)
        self.ffn = LightFFN(cfg.d_m, cfg.ffn_dim, rng, cfg.dropout)

    def forward(self, x: Tensor, memory: Tensor | None = None, memory_padding: np.ndarray | None = None,
                memory_kv: tuple[Tensor, Tensor] | None = None) -> Tensor:
        if memory_kv is None:
            if memory is None:
                raise ValueError("decoder block needs the encoder output or its cached projections")
            memory_kv = self.cross.project_memory(memory)
        x = x + self.attn(self.attn_norm(x))
        x = x + self.cross(self.cross_norm(x), memory_kv, memory_padding)
        return x + self.ffn(self.ffn_norm(x))

