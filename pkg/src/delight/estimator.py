"""scikit-learn style wrappers around the seq2seq model and the character LM."""
from __future__ import annotations

import math
from numbers import Integral

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .autodiff import cross_entropy_smoothed, no_grad
from .data import CharLMData, copy_accuracy, unigram_perplexity, windows
from .model import BOS, EOS, NUM_SPECIAL, ModelConfig, build_model, greedy_decode, pad_batch
from .scaling import ScalingConfig
from .train import TrainState, train_step


def check_sequences(X, name: str = "X", min_token: int = NUM_SPECIAL) -> list[list[int]]:
    """Validate a ragged batch of token-id sequences and return it as lists of ints."""
    if isinstance(X, (str, bytes)) or not hasattr(X, "__len__"):
        raise TypeError(f"{name} must be a sequence of token-id sequences")
    if len(X) == 0:
        raise ValueError(f"{name} is empty")
    out = []
    for i, seq in enumerate(X):
        seq = np.asarray(seq)
        if seq.ndim != 1 or seq.size == 0:
            raise ValueError(f"{name}[{i}] must be a non-empty 1-d sequence")
        if not np.issubdtype(seq.dtype, np.integer):
            raise TypeError(f"{name}[{i}] must hold integer token ids, got {seq.dtype}")
        if seq.min() < min_token:
            raise ValueError(f"{name}[{i}] uses reserved ids (< {min_token}); 0-2 are PAD/BOS/EOS")
        out.append(seq.tolist())
    return out


def check_text(X, name: str = "X") -> str:
    if isinstance(X, str):
        text = X
    elif hasattr(X, "__iter__") and all(isinstance(s, str) for s in X):
        text = "\n".join(X)
    else:
        raise TypeError(f"{name} must be a string or an iterable of strings")
    if not text:
        raise ValueError(f"{name} is empty")
    return text


class _DelightBase(BaseEstimator):
    def _check_params(self):
        for name in ("d_m", "N_min", "N_max", "steps", "batch_size", "warmup"):
            value = getattr(self, name)
            if not isinstance(value, Integral) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not 0 <= self.label_smoothing < 1:
            raise ValueError(f"label_smoothing must be in [0, 1), got {self.label_smoothing!r}")

    def _model_config(self, vocab_size: int, task: str, max_positions: int) -> ModelConfig:
        scaling = ScalingConfig(self.N_min, self.N_max, self.m_w, self.B)
        return ModelConfig(vocab_size, self.d_m, scaling, r=self.r, task=task, max_positions=max_positions,
                           g_max=self.g_max, shuffle=self.shuffle)

    def _fit_loop(self, sample) -> None:
        seed = 0 if self.random_state is None else int(self.random_state)
        self.model_ = build_model(self.model_config_, seed)
        state = TrainState.create(self.model_, seed, self.peak_lr, self.warmup, self.label_smoothing)
        self.loss_curve_ = [train_step(state, sample(state.rng)) for _ in range(self.steps)]
        self.n_iter_ = state.step

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(f"this {type(self).__name__} instance is not fitted yet; call fit first")


class DelightSeq2Seq(_DelightBase):
    """Encoder-decoder DeLighT model for token-sequence transduction.

    ``X`` and ``y`` are ragged lists of token ids ``>= 3`` (0, 1, 2 are PAD,
    BOS, EOS). ``score`` is greedy token accuracy with EOS counted.
    """

    def __init__(self, d_m=64, N_min=2, N_max=4, m_w=2, B=None, r=4, g_max=None, shuffle=True,
                 vocab_size=None, steps=2000, batch_size=32, peak_lr=2e-3, warmup=400,
                 label_smoothing=0.1, random_state=0):
        self.d_m = d_m
        self.N_min = N_min
        self.N_max = N_max
        self.m_w = m_w
        self.B = B
        self.r = r
        self.g_max = g_max
        self.shuffle = shuffle
        self.vocab_size = vocab_size
        self.steps = steps
        self.batch_size = batch_size
        self.peak_lr = peak_lr
        self.warmup = warmup
        self.label_smoothing = label_smoothing
        self.random_state = random_state

    def fit(self, X, y):
        self._check_params()
        X, y = check_sequences(X, "X"), check_sequences(y, "y")
        if len(X) != len(y):
            raise ValueError(f"X and y have different lengths ({len(X)} != {len(y)})")
        seen = max(max(map(max, X)), max(map(max, y))) + 1
        vocab = self.vocab_size or seen
        if vocab < seen:
            raise ValueError(f"vocab_size={vocab} but token id {seen - 1} appears in the data")
        self.max_target_len_ = max(map(len, y))
        longest = max(max(map(len, X)), self.max_target_len_ + 1)
        self.model_config_ = self._model_config(vocab, "seq2seq", max(256, 2 * longest))

        def sample(rng):
            idx = rng.integers(0, len(X), size=self.batch_size)
            return {
                "src": pad_batch([X[i] for i in idx]),
                "tgt_in": pad_batch([[BOS] + y[i] for i in idx]),
                "tgt_out": pad_batch([y[i] + [EOS] for i in idx]),
            }

        self._fit_loop(sample)
        return self

    def predict(self, X, max_len: int | None = None) -> list[list[int]]:
        self._check_fitted()
        X = check_sequences(X)
        max_len = max_len or max(self.max_target_len_, max(map(len, X))) + 2
        return [r.tokens for r in greedy_decode(self.model_, X, max_len)]

    def score(self, X, y) -> float:
        y = check_sequences(y, "y")
        return copy_accuracy(self.predict(X), y)


class DelightLanguageModel(_DelightBase):
    """Decoder-only character language model. ``score`` is minus the validation cross-entropy (nats)."""

    def __init__(self, d_m=64, N_min=2, N_max=4, m_w=2, B=None, r=4, g_max=None, shuffle=True,
                 context=32, steps=3000, batch_size=32, peak_lr=2e-3, warmup=400,
                 label_smoothing=0.1, random_state=0):
        self.d_m = d_m
        self.N_min = N_min
        self.N_max = N_max
        self.m_w = m_w
        self.B = B
        self.r = r
        self.g_max = g_max
        self.shuffle = shuffle
        self.context = context
        self.steps = steps
        self.batch_size = batch_size
        self.peak_lr = peak_lr
        self.warmup = warmup
        self.label_smoothing = label_smoothing
        self.random_state = random_state

    def fit(self, X, y=None):
        self._check_params()
        text = check_text(X)
        if len(text) <= self.context:
            raise ValueError(f"text must be longer than the context ({self.context} characters)")
        data = CharLMData(sorted(set(text)), np.empty(0, np.int64), np.empty(0, np.int64), self.context, 0.0)
        # the estimator trains on all of X; hold-out is the caller's business
        data.train = data.encode(text)
        data.unigram_perplexity = unigram_perplexity(data.train)
        self.data_ = data
        self.model_config_ = self._model_config(data.vocab_size, "lm", self.context)
        self._fit_loop(lambda rng: data.sample(rng, self.batch_size))
        return self

    def _nll(self, X) -> float:
        self._check_fitted()
        text = check_text(X)
        unknown = set(text) - set(self.data_.vocab)
        if unknown:
            raise ValueError(f"characters not seen during fit: {''.join(sorted(unknown))!r}")
        ids = self.data_.encode(text)
        if len(ids) <= self.context:
            raise ValueError(f"text must be longer than the context ({self.context} characters)")
        w = windows(ids, self.context, self.context)
        with no_grad():
            self.model_.eval()
            logits = self.model_(w[:, :-1])
            return cross_entropy_smoothed(logits, w[:, 1:], 0.0).item()

    def perplexity(self, X) -> float:
        return math.exp(self._nll(X))

    def score(self, X, y=None) -> float:
        return -self._nll(X)


__all__ = ["DelightSeq2Seq", "DelightLanguageModel", "check_sequences", "check_text"]
