"""Analytical parameter and MAC counts.

A MAC is one fused multiply-add. Only matrix products are counted; softmax,
normalisation, activations and bias additions are free. The formulas here are
closed-form and never look at a built model, so they can be checked against
the instrumented counter in :mod:`delight.autodiff` and against an enumeration
of a model's parameter store.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

from .block import BlockConfig
from .dextra import DextraPlan, as_fraction

CSV_COLUMNS = ("component", "block", "params", "macs")


def glt_params(d_in: int, d_out: int, g: int, bias: bool = True) -> int:
    _check_groups(d_in, d_out, g)
    return d_in * d_out // g + (d_out if bias else 0)


def glt_macs(d_in: int, d_out: int, g: int) -> int:
    """MACs per token of a group linear map (``g=1`` is a dense layer)."""
    _check_groups(d_in, d_out, g)
    return d_in * d_out // g


def _check_groups(d_in, d_out, g):
    if g < 1 or d_in % g or d_out % g:
        raise ValueError(f"g={g} must divide d_in={d_in} and d_out={d_out}")


def self_attention_macs(n: int, d_o: int) -> int:
    """Both products of scaled dot-product attention over n tokens: 2 d_o n^2."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 2 * d_o * n * n


def source_target_attention_macs(n: int, m: int, d_o: int) -> int:
    """Decoding m target tokens one at a time against n source tokens: sum_k 2 k n d_o."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    return 2 * n * d_o * m * (m + 1) // 2


def incremental_self_attention_macs(m: int, d_o: int) -> int:
    """Causal self-attention recomputed over the prefix at each of m decode steps."""
    return sum(self_attention_macs(k, d_o) for k in range(1, m + 1))


def light_ffn_weight_params(d_m: int, r) -> int:
    return 2 * d_m * math.floor(Fraction(d_m) / as_fraction(r))


def baseline_ffn_weight_params(d_m: int, expansion: int = 4) -> int:
    return 2 * d_m * expansion * d_m


def layer_norm_params(d: int) -> int:
    return 2 * d


@dataclass(frozen=True)
class CostEntry:
    component: str
    block: str
    params: int
    macs: int


@dataclass
class CostReport:
    entries: list[CostEntry] = field(default_factory=list)
    n: int = 0
    m: int = 0
    mode: str = "forward"

    def add(self, component: str, block: str, params: int = 0, macs: int = 0) -> None:
        if params < 0 or macs < 0:
            raise ValueError("counts must be nonnegative")
        self.entries.append(CostEntry(component, block, int(params), int(macs)))

    @property
    def total_params(self) -> int:
        return sum(e.params for e in self.entries)

    @property
    def total_macs(self) -> int:
        return sum(e.macs for e in self.entries)

    def by_component(self) -> dict[str, tuple[int, int]]:
        out: dict[str, tuple[int, int]] = {}
        for e in self.entries:
            p, m = out.get(e.component, (0, 0))
            out[e.component] = (p + e.params, m + e.macs)
        return out

    def by_block(self) -> dict[str, tuple[int, int]]:
        out: dict[str, tuple[int, int]] = {}
        for e in self.entries:
            p, m = out.get(e.block, (0, 0))
            out[e.block] = (p + e.params, m + e.macs)
        return out

    def macs_by_scope(self) -> dict[tuple[str, str], int]:
        out: dict[tuple[str, str], int] = {}
        for e in self.entries:
            if e.macs:
                out[(e.component, e.block)] = out.get((e.component, e.block), 0) + e.macs
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for e in self.entries:
            writer.writerow([e.component, e.block, e.params, e.macs])
        writer.writerow(["total", "", self.total_params, self.total_macs])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, n: int = 0, m: int = 0, mode: str = "forward") -> "CostReport":
        rows = list(csv.reader(io.StringIO(text)))
        if tuple(rows[0]) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {rows[0]}")
        report = cls(n=n, m=m, mode=mode)
        for component, block, params, macs in rows[1:]:
            if component == "total":
                if (int(params), int(macs)) != (report.total_params, report.total_macs):
                    raise ValueError("CSV total row does not match the sum of entries")
                continue
            report.add(component, block, int(params), int(macs))
        return report

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "mode": self.mode,
            "entries": [asdict(e) for e in self.entries],
            "total_params": self.total_params,
            "total_macs": self.total_macs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "CostReport":
        report = cls([CostEntry(**e) for e in d["entries"]], d["n"], d["m"], d["mode"])
        if (d["total_params"], d["total_macs"]) != (report.total_params, report.total_macs):
            raise ValueError("stored totals do not match the sum of entries")
        return report

    @classmethod
    def from_json(cls, text: str) -> "CostReport":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class BlockCost:
    """Per-token linear MACs and parameter counts of one block's parts."""

    dextra_params: int
    dextra_macs: int
    attn_proj_params: int
    attn_proj_macs: int
    ffn_params: int
    ffn_macs: int
    norm_params: int
    cross_params: int = 0
    cross_token_macs: int = 0
    cross_memory_macs: int = 0

    @property
    def params(self) -> int:
        return self.dextra_params + self.attn_proj_params + self.ffn_params + self.norm_params + self.cross_params


def block_cost(cfg: BlockConfig, decoder: bool = False) -> BlockCost:
    plan = DextraPlan.build(cfg.dextra_config())
    d_m, d_o, f = cfg.d_m, cfg.d_o, cfg.ffn_dim
    attn_proj_params = 3 * glt_params(d_o, d_o, 1) + glt_params(d_o, d_m, 1)
    attn_proj_macs = 3 * glt_macs(d_o, d_o, 1) + glt_macs(d_o, d_m, 1)
    ffn_params = glt_params(d_m, f, 1) + glt_params(f, d_m, 1)
    ffn_macs = glt_macs(d_m, f, 1) + glt_macs(f, d_m, 1)
    norms = 3 if decoder else 2
    cost = BlockCost(
        dextra_params=sum(glt_params(s.in_dim, s.out_dim, s.groups) for s in plan.layers),
        dextra_macs=sum(glt_macs(s.in_dim, s.out_dim, s.groups) for s in plan.layers),
        attn_proj_params=attn_proj_params,
        attn_proj_macs=attn_proj_macs,
        ffn_params=ffn_params,
        ffn_macs=ffn_macs,
        norm_params=norms * layer_norm_params(d_m),
    )
    if decoder:
        cost = BlockCost(
            **{**asdict(cost),
               "cross_params": 3 * glt_params(d_m, d_o, 1) + glt_params(d_o, d_m, 1),
               "cross_token_macs": glt_macs(d_m, d_o, 1) + glt_macs(d_o, d_m, 1),
               "cross_memory_macs": 2 * glt_macs(d_m, d_o, 1)}
        )
    return cost


def _embedding(report: CostReport, cfg, stack: str, tokens: int) -> None:
    params = cfg.vocab_size * cfg.embed_dim
    macs = 0
    if cfg.has_projection:
        params += cfg.embed_dim * cfg.d_m
        macs = tokens * cfg.embed_dim * cfg.d_m
    report.add("embedding", stack, params, macs)


def _stack(report: CostReport, blocks: list[BlockConfig], stack: str, tokens: int, attention_macs,
           n_source: int = 0, cross_attention_macs=None) -> None:
    decoder = cross_attention_macs is not None
    for b, bcfg in enumerate(blocks):
        label = f"{stack}.{b}"
        c = block_cost(bcfg, decoder)
        report.add("norm", label, c.norm_params, 0)
        report.add("dextra", label, c.dextra_params, tokens * c.dextra_macs)
        report.add("attn_proj", label, c.attn_proj_params, tokens * c.attn_proj_macs)
        report.add("attention", label, 0, attention_macs(bcfg.d_o))
        if decoder:
            report.add("cross_proj", label, c.cross_params,
                       tokens * c.cross_token_macs + n_source * c.cross_memory_macs)
            report.add("cross_attention", label, 0, cross_attention_macs(bcfg.d_o))
        report.add("ffn", label, c.ffn_params, tokens * c.ffn_macs)
    report.add("norm", stack, layer_norm_params(blocks[0].d_m) if blocks else 0, 0)


def model_cost(cfg, n: int = 20, m: int = 20, mode: str = "forward") -> CostReport:
    """Parameters and MACs of the model described by a ``ModelConfig``.

    ``mode="forward"`` is one teacher-forced pass (n source, m target tokens;
    a language model processes n tokens). ``mode="decode"`` is greedy decoding
    of m tokens that re-runs the decoder over the prefix at each step, with
    the encoder run once and the classifier applied to the newest position.
    """
    if mode not in ("forward", "decode"):
        raise ValueError(f"mode must be 'forward' or 'decode', got {mode!r}")
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    blocks = cfg.block_configs()
    V, d_m = cfg.vocab_size, cfg.d_m
    classifier_params = glt_params(d_m, V, 1)

    if cfg.task == "lm":
        if mode == "decode":
            raise ValueError("decode mode applies to seq2seq models only")
        report = CostReport(n=n, m=0, mode=mode)
        _embedding(report, cfg, "decoder", n)
        _stack(report, blocks, "decoder", n, lambda d_o: self_attention_macs(n, d_o))
        report.add("classifier", "", classifier_params, n * glt_macs(d_m, V, 1))
        return report

    report = CostReport(n=n, m=m, mode=mode)
    _embedding(report, cfg, "encoder", n)
    _stack(report, blocks, "encoder", n, lambda d_o: self_attention_macs(n, d_o))
    if mode == "forward":
        dec_tokens = m
        _embedding(report, cfg, "decoder", dec_tokens)
        _stack(report, blocks, "decoder", dec_tokens, lambda d_o: self_attention_macs(m, d_o),
               n, lambda d_o: 2 * m * n * d_o)
        report.add("classifier", "", classifier_params, m * glt_macs(d_m, V, 1))
    else:
        dec_tokens = m * (m + 1) // 2
        _embedding(report, cfg, "decoder", dec_tokens)
        _stack(report, blocks, "decoder", dec_tokens, lambda d_o: incremental_self_attention_macs(m, d_o),
               n, lambda d_o: source_target_attention_macs(n, m, d_o))
        report.add("classifier", "", classifier_params, m * glt_macs(d_m, V, 1))
    return report
