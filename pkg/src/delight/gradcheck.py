"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .block import BlockConfig, DecoderBlock, EncoderBlock, LightFFN, single_head_attention
from .dextra import Dextra, DextraConfig
from .grouped import GroupLinear, feature_shuffle, input_mixer
from .model import ModelConfig, build_model
from .scaling import ScalingConfig

COMPONENTS = ("primitives", "glt", "shuffle+mixer", "dextra", "attention", "light_ffn",
              "encoder_block", "decoder_block", "full_model")

# Relative errors use max(|analytic|, |numeric|, floor) as the denominator with
# floor = FLOOR * max(1, |f|). Central-difference round-off grows with |f|
# (about eps * |f| / h), so entries whose true gradient sits below that noise
# level are judged on absolute error instead of amplifying it.
FLOOR = 1e-6


@dataclass
class GradcheckReport:
    component: str
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    @property
    def failures(self) -> list[str]:
        return [name for name, err in self.errors.items() if not err < self.tolerance]

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        worst = max(self.errors, key=self.errors.get) if self.errors else "-"
        line = f"{status} {self.component}: max rel err {self.max_error:.3e} (worst: {worst}, tol {self.tolerance:g})"
        if not self.passed:
            line += f"; failing: {', '.join(self.failures)}"
        return line


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> float:
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def numeric_gradient(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-5,
                     indices: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Central differences of the scalar ``fn()`` w.r.t. selected flat entries of ``t``."""
    flat_idx = np.arange(t.size) if indices is None else indices
    out = np.empty(len(flat_idx))
    with no_grad():
        for j, i in enumerate(flat_idx):
            idx = np.unravel_index(i, t.shape)
            saved = t.data[idx]
            t.data[idx] = saved + h
            f_plus = fn().item()
            t.data[idx] = saved - h
            f_minus = fn().item()
            t.data[idx] = saved
            out[j] = (f_plus - f_minus) / (2 * h)
    return flat_idx, out


def check(fn: Callable[[], Tensor], tensors: dict[str, Tensor], component: str = "custom",
          tolerance: float = 1e-4, h: float = 1e-5, max_entries: int | None = None,
          seed: int = 0) -> GradcheckReport:
    """Compare backprop gradients of ``fn`` with central differences for each named tensor.

    ``max_entries`` caps how many coordinates per tensor are probed (chosen at
    random with ``seed``); ``None`` probes every coordinate.
    """
    for t in tensors.values():
        t.grad = None
        t.data = np.array(t.data, dtype=np.float64)
    loss = fn()
    if loss.requires_grad:
        loss.backward()
    floor = FLOOR * max(1.0, abs(loss.item()))
    rng = np.random.default_rng(seed)
    report = GradcheckReport(component, tolerance)
    for name, t in tensors.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        indices = None
        if max_entries is not None and t.size > max_entries:
            indices = np.sort(rng.choice(t.size, size=max_entries, replace=False))
        idx, numeric = numeric_gradient(fn, t, h, indices)
        report.errors[name] = relative_error(analytic.reshape(-1)[idx], numeric, floor)
    return report


def _weighted_sum(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    weights = rng.normal(size=out.shape)
    return lambda y: ad.sum_(y * weights)


def _leaf(rng, *shape) -> Tensor:
    return Tensor(rng.uniform(-2.0, 2.0, size=shape), requires_grad=True)


def _module_case(module, inputs: dict[str, Tensor], forward: Callable[[], Tensor], rng):
    project = _weighted_sum(forward(), rng)
    tensors = {**inputs, **dict(module.named_parameters())}
    return (lambda: project(forward())), tensors


def primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[], Tensor], dict[str, Tensor]]]:
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)
    x, y = _leaf(rng, 3, 6), _leaf(rng, 3, 6)
    gain, bias = _leaf(rng, 6), _leaf(rng, 6)
    logits = _leaf(rng, 4, 5)
    table = _leaf(rng, 7, 3)
    target = rng.integers(0, 5, size=4)
    target[1] = 0
    ids = np.array([[1, 4, 1], [6, 0, 2]])
    mask_seed = int(rng.integers(1 << 30))
    w = rng.normal(size=(3, 6))

    def wsum(t, weights=None):
        weights = rng_w(t.shape) if weights is None else weights
        return ad.sum_(t * weights)

    cache: dict[tuple, np.ndarray] = {}

    def rng_w(shape):
        if shape not in cache:
            cache[shape] = np.random.default_rng(len(cache) + 11).normal(size=shape)
        return cache[shape]

    perm = rng.permutation(6)
    return {
        "matmul": (lambda: wsum(ad.matmul(a, b)), {"a": a, "b": b}),
        "add": (lambda: wsum(ad.add(x, y)), {"x": x, "y": y}),
        "broadcast_add": (lambda: wsum(x + gain), {"x": x, "bias": gain}),
        "mul": (lambda: wsum(ad.mul(x, gain)), {"x": x, "gain": gain}),
        "scale": (lambda: wsum(ad.scale(x, -1.7)), {"x": x}),
        "concat_split": (lambda: wsum(ad.concat(ad.split(x, [2, 4], axis=-1)[::-1], axis=-1)), {"x": x}),
        "permute_features": (lambda: wsum(ad.permute_features(x, perm)), {"x": x}),
        "transpose_reshape": (lambda: wsum(ad.reshape(ad.transpose(a, (2, 0, 1)), (4, 6))), {"a": a}),
        "gelu": (lambda: wsum(ad.gelu(x)), {"x": x}),
        "softmax": (lambda: wsum(ad.softmax(x, axis=-1)), {"x": x}),
        "log_softmax": (lambda: wsum(ad.log_softmax(x, axis=0)), {"x": x}),
        "layer_norm": (lambda: wsum(ad.layer_norm(x, gain, bias)), {"x": x, "gain": gain, "bias": bias}),
        "dropout": (lambda: wsum(ad.dropout(x, 0.3, True, np.random.default_rng(mask_seed))), {"x": x}),
        "embedding": (lambda: wsum(ad.embedding(table, ids)), {"table": table}),
        "cross_entropy_smoothed": (lambda: ad.cross_entropy_smoothed(logits, target, 0.1, ignore_index=0),
                                   {"logits": logits}),
        "sum_mean": (lambda: ad.mean(ad.sum_(x * w, axis=0) * gain), {"x": x, "gain": gain}),
    }


def component_case(component: str, seed: int = 0):
    """Build ``(loss_fn, named_tensors)`` for one of :data:`COMPONENTS` (except ``primitives``)."""
    rng = np.random.default_rng(seed)
    if component == "glt":
        layer = GroupLinear(8, 8, 4, rng)
        x = _leaf(rng, 3, 8)
        return _module_case(layer, {"x": x}, lambda: layer(x), rng)
    if component == "shuffle+mixer":
        consumer = GroupLinear(16, 8, 2, rng)
        x, y = _leaf(rng, 3, 8), _leaf(rng, 3, 8)
        return _module_case(consumer, {"x": x, "y": y},
                            lambda: consumer(input_mixer(x, feature_shuffle(y, 4), 2, 4)), rng)
    if component == "dextra":
        unit = Dextra.from_config(DextraConfig(32, 16, 4, 2, g_max=2), rng)
        x = _leaf(rng, 3, 32)
        return _module_case(unit, {"x": x}, lambda: unit(x), rng)
    if component == "attention":
        q, k, v = _leaf(rng, 4, 8), _leaf(rng, 4, 8), _leaf(rng, 4, 8)
        project = _weighted_sum(single_head_attention(q, k, v, causal=True), rng)
        return (lambda: project(single_head_attention(q, k, v, causal=True))), {"q": q, "k": k, "v": v}
    if component == "light_ffn":
        ffn = LightFFN(16, 4, rng)
        x = _leaf(rng, 3, 16)
        return _module_case(ffn, {"x": x}, lambda: ffn(x), rng)
    if component == "encoder_block":
        block = EncoderBlock(BlockConfig(32, 4, 2, g_max=2), rng)
        x = _leaf(rng, 4, 32)
        return _module_case(block, {"x": x}, lambda: block(x), rng)
    if component == "decoder_block":
        block = DecoderBlock(BlockConfig(32, 3, 2, g_max=2), rng)
        x, memory = _leaf(rng, 3, 32), _leaf(rng, 4, 32)
        return _module_case(block, {"x": x, "enc_out": memory}, lambda: block(x, memory), rng)
    if component == "full_model":
        cfg = ModelConfig(10, 32, ScalingConfig(2, 3, 2, B=2), task="lm", g_max=2, max_positions=8)
        model = build_model(cfg, seed)
        batch = {"inputs": rng.integers(3, 10, size=(2, 5)), "targets": rng.integers(3, 10, size=(2, 5))}
        return (lambda: model.loss(batch, 0.1)), dict(model.named_parameters())
    raise ValueError(f"unknown component {component!r}; choose from {', '.join(COMPONENTS)}")


def gradcheck(component: str, tolerance: float = 1e-4, seed: int = 0,
              max_entries: int | None = None) -> GradcheckReport:
    if component == "primitives":
        report = GradcheckReport("primitives", tolerance)
        for name, (fn, tensors) in primitive_cases(np.random.default_rng(seed)).items():
            sub = check(fn, tensors, name, tolerance, max_entries=max_entries, seed=seed)
            report.errors.update({f"{name}.{k}": v for k, v in sub.errors.items()})
        return report
    fn, tensors = component_case(component, seed)
    return check(fn, tensors, component, tolerance, max_entries=max_entries, seed=seed)


def gradcheck_all(tolerance: float = 1e-4, seed: int = 0, max_entries: int | None = None) -> list[GradcheckReport]:
    return [gradcheck(c, tolerance, seed, max_entries) for c in COMPONENTS]
