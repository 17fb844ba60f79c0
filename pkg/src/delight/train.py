"""Adam with inverse-sqrt warmup, the training loop, evaluation and checkpoints."""
from __future__ import annotations

import hashlib
import json
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import cross_entropy_smoothed, no_grad
from .config import RunConfig
from .data import CharLMData, copy_accuracy, copy_batch, make_char_lm_dataset, make_copy_dataset
from .model import ModelConfig, PAD, build_model, greedy_decode
from .nn import Module

CHECKPOINT_MAGIC = b"DLCKPT01"
CHECKPOINT_VERSION = 1


class NonFiniteLossError(FloatingPointError):
    pass


def lr_schedule(step: int, warmup_steps: int, peak_lr: float) -> float:
    """Linear warmup to ``peak_lr`` at ``warmup_steps``, then decay as 1/sqrt(step)."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    return peak_lr * min(step / warmup_steps, math.sqrt(warmup_steps / step))


class Adam:
    def __init__(self, model: Module, betas: tuple[float, float] = (0.9, 0.98), eps: float = 1e-9):
        self.params = list(model.named_parameters())
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * p.grad
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * p.grad**2
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainState:
    model: Module
    optimizer: Adam
    rng: np.random.Generator
    step: int = 0
    peak_lr: float = 2e-3
    warmup: int = 400
    label_smoothing: float = 0.1

    @classmethod
    def create(cls, model: Module, seed: int, peak_lr: float = 2e-3, warmup: int = 400,
               label_smoothing: float = 0.1) -> "TrainState":
        # data order gets its own stream so it does not shift with model size
        rng = np.random.default_rng([seed, 1])
        return cls(model, Adam(model), rng, 0, peak_lr, warmup, label_smoothing)


def train_step(state: TrainState, batch: dict) -> float:
    """One forward/backward/Adam update; returns the (smoothed) training loss."""
    model = state.model
    model.train()
    model.zero_grad()
    loss = model.loss(batch, state.label_smoothing)
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteLossError(f"non-finite loss {value} at step {state.step + 1}")
    loss.backward()
    state.step += 1
    state.optimizer.step(lr_schedule(state.step, state.warmup, state.peak_lr))
    return value


# -- tasks ----------------------------------------------------------------


class CopyTask:
    kind = "copy"

    def __init__(self, task: dict, vocab_size: int, seed: int):
        span = (task["min_len"], task["max_len"])
        self.vocab_size = vocab_size
        self.max_len = task["max_len"]
        self.train = make_copy_dataset(vocab_size, span, task["train_size"], seed)
        seen = {tuple(s) for s in self.train}
        pool = make_copy_dataset(vocab_size, span, 4 * task["val_size"], seed + 7919)
        self.val = [s for s in pool if tuple(s) not in seen][:task["val_size"]]

    def sample(self, rng: np.random.Generator, batch_size: int) -> dict:
        idx = rng.integers(0, len(self.train), size=batch_size)
        return copy_batch([self.train[i] for i in idx])

    def tokens(self, batch: dict) -> int:
        return int((batch["tgt_out"] != PAD).sum())

    def evaluate(self, model) -> dict:
        batch = copy_batch(self.val)
        with no_grad():
            model.eval()
            logits = model(batch["src"], batch["tgt_in"])
            loss = cross_entropy_smoothed(logits, batch["tgt_out"], 0.0, ignore_index=PAD).item()
        decoded = greedy_decode(model, self.val, self.max_len + 2)
        return {"val_loss": loss, "accuracy": copy_accuracy([d.tokens for d in decoded], self.val)}


class CharLMTask:
    kind = "char_lm"

    def __init__(self, task: dict, seed: int):
        text = Path(task["text_path"]).read_text(encoding="utf-8") if task["text_path"] else None
        self.data: CharLMData = make_char_lm_dataset(text, task["context"], seed)
        self.vocab_size = self.data.vocab_size

    def sample(self, rng: np.random.Generator, batch_size: int) -> dict:
        return self.data.sample(rng, batch_size)

    def tokens(self, batch: dict) -> int:
        return int(batch["targets"].size)

    def evaluate(self, model) -> dict:
        w = self.data.val_windows()
        with no_grad():
            model.eval()
            logits = model(w[:, :-1])
            loss = cross_entropy_smoothed(logits, w[:, 1:], 0.0).item()
        return {"val_loss": loss, "perplexity": math.exp(loss)}


def make_task(run: RunConfig, seed: int):
    task = run["task"]
    if run.task_kind == "char_lm":
        return CharLMTask(task, seed)
    return CopyTask(task, run["model"]["vocab_size"] or 16, seed)


def resolve_model_config(run: RunConfig, task=None) -> ModelConfig:
    if task is None and run.task_kind == "char_lm" and not run["model"]["vocab_size"]:
        task = make_task(run, run["train"]["seed"])
    return run.model_config(task.vocab_size if task is not None else None)


# -- training loop ----------------------------------------------------------


@dataclass
class TrainResult:
    state: TrainState
    task: object
    model_config: ModelConfig
    metrics: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)


def run_training(run: RunConfig, out_dir: str | Path | None = None, seed: int | None = None,
                 steps: int | None = None, timing: bool = False,
                 log: Callable[[dict], None] | None = None) -> TrainResult:
    """Train the configured model; write ``metrics.jsonl`` and checkpoints when ``out_dir`` is given.

    Every metrics line holds step, lr, loss, tokens and tokens_per_sec. The
    throughput field is only measured when ``timing`` is set (it is ``null``
    otherwise) so that seeded runs produce byte-identical logs.
    """
    if seed is not None or steps is not None:
        run = run.override("train", seed=seed, steps=steps)
    tc = run["train"]
    task = make_task(run, tc["seed"])
    model_cfg = resolve_model_config(run, task)
    model = build_model(model_cfg, tc["seed"])
    state = TrainState.create(model, tc["seed"], tc["peak_lr"], tc["warmup"], tc["label_smoothing"])
    result = TrainResult(state, task, model_cfg)

    out = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = open(out / "metrics.jsonl", "w", encoding="utf-8")
    try:
        for _ in range(tc["steps"]):
            batch = task.sample(state.rng, tc["batch_size"])
            start = time.perf_counter() if timing else 0.0
            loss = train_step(state, batch)
            tokens = task.tokens(batch)
            record = {
                "step": state.step,
                "lr": lr_schedule(state.step, state.warmup, state.peak_lr),
                "loss": loss,
                "tokens": tokens,
                "tokens_per_sec": tokens / (time.perf_counter() - start) if timing else None,
            }
            if tc["eval_every"] and state.step % tc["eval_every"] == 0:
                record.update(task.evaluate(model))
            if state.step % tc["log_every"] == 0 or "val_loss" in record:
                result.metrics.append(record)
                if log_file is not None:
                    log_file.write(json.dumps(record) + "\n")
                if log is not None:
                    log(record)
            if out is not None and tc["checkpoint_every"] and state.step % tc["checkpoint_every"] == 0:
                save_checkpoint(out / f"checkpoint_{state.step}.ckpt", state, run, model_cfg)
        result.final = task.evaluate(model)
        if out is not None:
            save_checkpoint(out / "checkpoint.ckpt", state, run, model_cfg)
            (out / "final.json").write_text(json.dumps({"step": state.step, **result.final}, indent=2) + "\n")
    finally:
        if log_file is not None:
            log_file.close()
    return result


# -- checkpoints ------------------------------------------------------------


def config_hash(run: RunConfig, model_cfg: ModelConfig) -> str:
    blob = json.dumps({"run": run.to_dict(), "model": model_cfg.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def save_checkpoint(path: str | Path, state: TrainState, run: RunConfig, model_cfg: ModelConfig) -> None:
    """Binary checkpoint: magic, header length, JSON header, then raw little-endian float64 tensors."""
    arrays: list[tuple[str, np.ndarray]] = []
    for name, p in state.model.named_parameters():
        arrays.append((f"param/{name}", p.data))
        arrays.append((f"adam_m/{name}", state.optimizer.m[name]))
        arrays.append((f"adam_v/{name}", state.optimizer.v[name]))
    entries, offset = [], 0
    for name, a in arrays:
        nbytes = a.size * 8
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = {
        "format_version": CHECKPOINT_VERSION,
        "step": state.step,
        "adam_t": state.optimizer.t,
        "rng_state": state.rng.bit_generator.state,
        "run_config": run.to_dict(),
        "model_config": model_cfg.to_dict(),
        "config_hash": config_hash(run, model_cfg),
        "tensors": entries,
    }
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(head)))
        f.write(head)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    run: RunConfig
    model_config: ModelConfig
    state: TrainState


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a delight checkpoint")
    (length,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + length])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}: {exc}") from None
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    run = RunConfig(header["run_config"])
    model_cfg = ModelConfig.from_dict(header["model_config"])
    if config_hash(run, model_cfg) != header["config_hash"]:
        raise CheckpointError("config hash mismatch; checkpoint header was modified")
    body = raw[16 + length:]
    tensors = {}
    for e in header["tensors"]:
        chunk = body[e["offset"]:e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise CheckpointError(f"truncated checkpoint: tensor {e['name']}")
        tensors[e["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(e["shape"]).astype(np.float64)

    tc = run["train"]
    model = build_model(model_cfg, tc["seed"])
    model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("param/")})
    state = TrainState.create(model, tc["seed"], tc["peak_lr"], tc["warmup"], tc["label_smoothing"])
    state.step = header["step"]
    state.optimizer.t = header["adam_t"]
    for name, _ in state.optimizer.params:
        state.optimizer.m[name] = tensors[f"adam_m/{name}"].copy()
        state.optimizer.v[name] = tensors[f"adam_v/{name}"].copy()
    state.rng.bit_generator.state = header["rng_state"]
    return Checkpoint(run, model_cfg, state)
