"""Deterministic toy tasks: sequence copying and character-level language modelling."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .model import BOS, EOS, NUM_SPECIAL, PAD, pad_batch


def bundled_text() -> str:
    """A few public-domain paragraphs (US founding documents, Gettysburg Address, Alice ch. 1)."""
    return resources.files("delight").joinpath("corpora", "corpus.txt").read_text(encoding="utf-8")


def make_copy_dataset(V: int, len_range: tuple[int, int], size: int, seed: int) -> list[list[int]]:
    """``size`` random sequences over content tokens ``[3, V)``; lengths drawn from the inclusive range."""
    if V < NUM_SPECIAL + 1:
        raise ValueError(f"V must be >= {NUM_SPECIAL + 1}")
    lo, hi = len_range
    if not 1 <= lo <= hi:
        raise ValueError(f"invalid length range {len_range}")
    rng = np.random.default_rng(seed)
    lengths = rng.integers(lo, hi + 1, size=size)
    return [rng.integers(NUM_SPECIAL, V, size=int(n)).tolist() for n in lengths]


def copy_batch(seqs: list[list[int]]) -> dict[str, np.ndarray]:
    """Teacher-forcing arrays for the copy task: target equals source."""
    return {
        "src": pad_batch(seqs),
        "tgt_in": pad_batch([[BOS] + s for s in seqs]),
        "tgt_out": pad_batch([s + [EOS] for s in seqs]),
    }


def copy_accuracy(predictions: list[list[int]], targets: list[list[int]]) -> float:
    """Fraction of target tokens (EOS included) reproduced at the right position."""
    correct = total = 0
    for pred, tgt in zip(predictions, targets):
        tgt = list(tgt) + [EOS]
        pred = list(pred) + [EOS]
        total += len(tgt)
        correct += sum(p == t for p, t in zip(pred, tgt))
    return correct / total if total else 0.0


@dataclass
class CharLMData:
    vocab: list[str]
    train: np.ndarray
    val: np.ndarray
    context: int
    unigram_perplexity: float

    @property
    def vocab_size(self) -> int:
        return len(self.vocab) + NUM_SPECIAL

    def encode(self, text: str) -> np.ndarray:
        index = {c: i + NUM_SPECIAL for i, c in enumerate(self.vocab)}
        return np.array([index[c] for c in text], dtype=np.int64)

    def decode(self, ids) -> str:
        return "".join(self.vocab[i - NUM_SPECIAL] for i in ids if i >= NUM_SPECIAL)

    def train_windows(self) -> np.ndarray:
        return windows(self.train, self.context, stride=1)

    def val_windows(self) -> np.ndarray:
        return windows(self.val, self.context, stride=self.context)

    def sample(self, rng: np.random.Generator, batch_size: int) -> dict[str, np.ndarray]:
        starts = rng.integers(0, len(self.train) - self.context, size=batch_size)
        w = np.stack([self.train[s:s + self.context + 1] for s in starts])
        return {"inputs": w[:, :-1], "targets": w[:, 1:]}


def windows(ids: np.ndarray, context: int, stride: int) -> np.ndarray:
    starts = range(0, len(ids) - context, stride)
    return np.stack([ids[s:s + context + 1] for s in starts])


def unigram_perplexity(ids) -> float:
    counts = np.array(list(Counter(np.asarray(ids).tolist()).values()), dtype=np.float64)
    p = counts / counts.sum()
    return math.exp(-(p * np.log(p)).sum())


def make_char_lm_dataset(text: str | None = None, context: int = 32, seed: int = 0,
                         val_fraction: float = 0.1) -> CharLMData:
    """Split ``text`` into a leading train part and a trailing validation part.

    ``seed`` is accepted for interface symmetry; the split itself is positional,
    and batches are drawn later from the caller's generator.
    """
    if text is None:
        text = bundled_text()
    vocab = sorted(set(text))
    cut = int(len(text) * (1.0 - val_fraction))
    data = CharLMData(vocab, np.empty(0, np.int64), np.empty(0, np.int64), context, 0.0)
    ids = data.encode(text)
    data.train, data.val = ids[:cut], ids[cut:]
    if len(data.val) <= context or len(data.train) <= context:
        raise ValueError(f"text too short for context {context}")
    data.unigram_perplexity = unigram_perplexity(data.train)
    return data


__all__ = [
    "PAD", "BOS", "EOS", "bundled_text", "make_copy_dataset", "copy_batch", "copy_accuracy",
    "CharLMData", "make_char_lm_dataset", "unigram_perplexity", "windows",
]
