"""Full DeLighT networks: encoder-decoder for seq2seq and decoder-only for LM."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .autodiff import Tensor, cross_entropy_smoothed, embedding, mac_scope, no_grad, split
from .block import BlockConfig, DecoderBlock, EncoderBlock
from .dextra import ConfigError, as_fraction
from .nn import LayerNorm, Linear, Module, parameter
from .scaling import BlockScale, ScalingConfig, blockwise_plan

PAD, BOS, EOS = 0, 1, 2
NUM_SPECIAL = 3


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_m: int
    scaling: ScalingConfig
    embed_dim: int | None = None
    d_o: int | None = None
    r: Fraction = Fraction(4)
    task: str = "seq2seq"
    max_positions: int = 256
    dropout: float = 0.0
    g_max: int | None = None
    shuffle: bool = True

    def __post_init__(self):
        object.__setattr__(self, "r", as_fraction(self.r))
        if self.embed_dim is None:
            object.__setattr__(self, "embed_dim", self.d_m)
        if self.task not in ("seq2seq", "lm"):
            raise ConfigError(f"task must be 'seq2seq' or 'lm', got {self.task!r}")
        if self.vocab_size < NUM_SPECIAL + 1:
            raise ConfigError(f"vocab_size must be >= {NUM_SPECIAL + 1} (pad/bos/eos reserved)")
        if self.d_m % 2:
            raise ConfigError(f"d_m must be even for sinusoidal positions, got {self.d_m}")
        if self.embed_dim > self.d_m:
            raise ConfigError(f"embed_dim={self.embed_dim} must not exceed d_m={self.d_m}")

    @property
    def has_projection(self) -> bool:
        return self.embed_dim != self.d_m

    def block_plan(self) -> list[BlockScale]:
        return blockwise_plan(self.scaling)

    def block_configs(self) -> list[BlockConfig]:
        return [
            BlockConfig(self.d_m, s.N, s.m_w, self.d_o, self.r, self.dropout, self.g_max, self.shuffle)
            for s in self.block_plan()
        ]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["r"] = str(self.r)
        d["scaling"]["m_w"] = str(self.scaling.m_w)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["scaling"] = ScalingConfig(**d["scaling"])
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def sinusoidal_positions(max_len: int, d: int) -> np.ndarray:
    """Row ``pos`` holds sin/cos pairs at frequencies 10000^(-2i/d)."""
    if d % 2:
        raise ValueError(f"sinusoidal positions need an even dimension, got {d}")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    inv_freq = 10000.0 ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.empty((max_len, d))
    table[:, 0::2] = np.sin(pos * inv_freq)
    table[:, 1::2] = np.cos(pos * inv_freq)
    return table


class TokenEmbedding(Module):
    """Look-up table (+ dense projection when embed_dim < d_m), sqrt(d_m) scaling, sinusoidal positions."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, stack: str):
        self.stack = stack
        self.d_m = cfg.d_m
        self.table = parameter(rng.normal(0.0, cfg.embed_dim ** -0.5, size=(cfg.vocab_size, cfg.embed_dim)))
        self.proj = Linear(cfg.embed_dim, cfg.d_m, rng, bias=False, scope="embedding") if cfg.has_projection else None
        self.positions = sinusoidal_positions(cfg.max_positions, cfg.d_m)

    def forward(self, ids: np.ndarray) -> Tensor:
        n = ids.shape[-1]
        if n > len(self.positions):
            raise ValueError(f"sequence length {n} exceeds max_positions={len(self.positions)}")
        with mac_scope("embedding", self.stack):
            x = embedding(self.table, ids)
            if self.proj is not None:
                x = self.proj(x)
        return x * math.sqrt(self.d_m) + self.positions[:n]


def _last_position(x: Tensor) -> Tensor:
    n = x.shape[-2]
    return split(x, [n - 1, 1], axis=-2)[1]


class Seq2SeqModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        blocks = cfg.block_configs()
        self.src_embed = TokenEmbedding(cfg, rng, "encoder")
        self.encoder = [EncoderBlock(b, rng) for b in blocks]
        self.encoder_norm = LayerNorm(cfg.d_m)
        self.tgt_embed = TokenEmbedding(cfg, rng, "decoder")
        self.decoder = [DecoderBlock(b, rng) for b in blocks]
        self.decoder_norm = LayerNorm(cfg.d_m)
        self.classifier = Linear(cfg.d_m, cfg.vocab_size, rng, scope="classifier")

    def encode(self, src: np.ndarray) -> tuple[Tensor, np.ndarray]:
        src = np.atleast_2d(np.asarray(src))
        pad = src == PAD
        x = self.src_embed(src)
        for b, block in enumerate(self.encoder):
            with mac_scope("block", f"encoder.{b}"):
                x = block(x, pad)
        return self.encoder_norm(x), pad

    def memory_kv(self, memory: Tensor) -> list[tuple[Tensor, Tensor]]:
        kv = []
        for b, block in enumerate(self.decoder):
            with mac_scope("block", f"decoder.{b}"):
                kv.append(block.cross.project_memory(memory))
        return kv

    def decode(self, tgt_in: np.ndarray, memory_kv: list[tuple[Tensor, Tensor]], src_pad: np.ndarray,
               last_only: bool = False) -> Tensor:
        x = self.tgt_embed(np.atleast_2d(np.asarray(tgt_in)))
        for b, (block, kv) in enumerate(zip(self.decoder, memory_kv)):
            with mac_scope("block", f"decoder.{b}"):
                x = block(x, memory_padding=src_pad, memory_kv=kv)
        x = self.decoder_norm(x)
        if last_only:
            x = _last_position(x)
        with mac_scope("classifier", ""):
            return self.classifier(x)

    def forward(self, src: np.ndarray, tgt_in: np.ndarray) -> Tensor:
        memory, pad = self.encode(src)
        return self.decode(tgt_in, self.memory_kv(memory), pad)

    def loss(self, batch: dict, label_smoothing: float = 0.1) -> Tensor:
        logits = self(batch["src"], batch["tgt_in"])
        return cross_entropy_smoothed(logits, batch["tgt_out"], label_smoothing, ignore_index=PAD)


class LanguageModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embed = TokenEmbedding(cfg, rng, "decoder")
        self.blocks = [EncoderBlock(b, rng, causal=True) for b in cfg.block_configs()]
        self.norm = LayerNorm(cfg.d_m)
        self.classifier = Linear(cfg.d_m, cfg.vocab_size, rng, scope="classifier")

    def forward(self, ids: np.ndarray) -> Tensor:
        x = self.embed(np.atleast_2d(np.asarray(ids)))
        for b, block in enumerate(self.blocks):
            with mac_scope("block", f"decoder.{b}"):
                x = block(x)
        x = self.norm(x)
        with mac_scope("classifier", ""):
            return self.classifier(x)

    def loss(self, batch: dict, label_smoothing: float = 0.1) -> Tensor:
        logits = self(batch["inputs"])
        return cross_entropy_smoothed(logits, batch["targets"], label_smoothing, ignore_index=None)


def build_model(cfg: ModelConfig, seed: int = 0) -> Seq2SeqModel | LanguageModel:
    rng = np.random.default_rng(seed)
    if cfg.task == "lm":
        return LanguageModel(cfg, rng)
    return Seq2SeqModel(cfg, rng)


class DecodeResult(NamedTuple):
    tokens: list[int]
    truncated: bool


def greedy_decode(model: Seq2SeqModel, sources: Sequence[Sequence[int]] | np.ndarray, max_len: int,
                  stop_at_eos: bool = True) -> list[DecodeResult]:
    """Argmax decoding from BOS, one token per step, re-running the decoder on the whole prefix.

    Ties go to the lowest token id. A result is ``truncated`` when ``max_len``
    tokens were produced without an EOS.
    """
    src = pad_batch(sources)
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            memory, src_pad = model.encode(src)
            kv = model.memory_kv(memory)
            prefix = np.full((src.shape[0], 1), BOS, dtype=np.int64)
            done = np.zeros(src.shape[0], dtype=bool)
            for _ in range(max_len):
                logits = model.decode(prefix, kv, src_pad, last_only=True).data[:, -1, :]
                nxt = np.where(done, PAD, logits.argmax(axis=-1))
                prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
                if stop_at_eos:
                    done |= nxt == EOS
                    if done.all():
                        break
    finally:
        model.train(was_training)

    results = []
    for row in prefix[:, 1:]:
        row = row.tolist()
        if EOS in row and stop_at_eos:
            results.append(DecodeResult(row[:row.index(EOS)], False))
        else:
            results.append(DecodeResult(row, True))
    return results


def pad_batch(seqs: Sequence[Sequence[int]] | np.ndarray, length: int | None = None) -> np.ndarray:
    if isinstance(seqs, np.ndarray) and seqs.ndim == 2:
        return seqs.astype(np.int64)
    seqs = [list(s) for s in seqs]
    width = max(len(s) for s in seqs) if length is None else length
    out = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out
