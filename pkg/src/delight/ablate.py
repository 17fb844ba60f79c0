"""Toy-scale ablation sweeps: FFN reduction factor, feature shuffling, uniform vs block-wise scaling."""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

from .accounting import model_cost
from .config import RunConfig
from .dextra import as_fraction
from .train import resolve_model_config, run_training

AXES = ("r", "shuffle", "scaling")
COLUMNS = ("axis", "variant", "N_min", "N_max", "m_w", "B", "r", "shuffle", "params", "macs",
           "val_loss", "metric", "metric_value")
R_VALUES = (1, 2, 4, 8)


@dataclass
class Variant:
    name: str
    run: RunConfig


def _params(run: RunConfig) -> int:
    return model_cost(resolve_model_config(run)).total_params


def match_uniform_width(blockwise: RunConfig, N: int, tolerance: float = 0.05) -> RunConfig:
    """Uniform-depth config (same B) whose width multiplier best matches the block-wise parameter total.

    Candidates are multiples of 1/8 in [1, 8]; raises if none lands within ``tolerance``.
    """
    target = _params(blockwise)
    B = blockwise["scaling"]["B"] or max(blockwise["scaling"]["N_min"], blockwise["scaling"]["N_max"])
    best = None
    for k in range(8, 65):
        m_w = Fraction(k, 8)
        cand = blockwise.override("scaling", N_min=N, N_max=N, m_w=str(m_w), B=B)
        gap = abs(_params(cand) - target) / target
        if best is None or gap < best[0]:
            best = (gap, cand)
    if best[0] > tolerance:
        raise ValueError(f"no uniform N={N} config within {tolerance:.0%} of {target} parameters")
    return best[1]


def variants(run: RunConfig, axis: str) -> list[Variant]:
    if axis == "r":
        return [Variant(f"r={r}", run.override("model", r=r)) for r in R_VALUES]
    if axis == "shuffle":
        return [Variant("shuffle=on", run.override("model", shuffle=True)),
                Variant("shuffle=off", run.override("model", shuffle=False))]
    if axis == "scaling":
        s = run["scaling"]
        if s["N_min"] == s["N_max"]:
            raise ValueError("scaling ablation needs a block-wise config (N_min != N_max)")
        uniform_depth = round((s["N_min"] + s["N_max"]) / 2)
        return [Variant("block-wise", run),
                Variant(f"uniform N={uniform_depth}", match_uniform_width(run, uniform_depth))]
    raise ValueError(f"unknown ablation axis {axis!r}; choose from {', '.join(AXES)}")


def run_variant(axis: str, v: Variant, seeds: list[int]) -> dict:
    model_cfg = resolve_model_config(v.run)
    cost = model_cost(model_cfg, v.run["report"]["n"], v.run["report"]["m"])
    losses, metrics = [], []
    metric = "perplexity" if v.run.task_kind == "char_lm" else "accuracy"
    for seed in seeds:
        final = run_training(v.run, seed=seed).final
        losses.append(final["val_loss"])
        metrics.append(final[metric])
    s = v.run["scaling"]
    return {
        "axis": axis,
        "variant": v.name,
        "N_min": s["N_min"],
        "N_max": s["N_max"],
        "m_w": str(as_fraction(s["m_w"])),
        "B": model_cfg.scaling.B,
        "r": str(model_cfg.r),
        "shuffle": model_cfg.shuffle,
        "params": cost.total_params,
        "macs": cost.total_macs,
        "val_loss": sum(losses) / len(losses),
        "metric": metric,
        "metric_value": sum(metrics) / len(metrics),
    }


def ablate(run: RunConfig, axis: str, seeds: list[int] | None = None, jobs: int = 1) -> list[dict]:
    """Train every variant of ``axis`` (averaging over ``seeds``) and return one row per variant."""
    seeds = [run["train"]["seed"]] if not seeds else seeds
    todo = variants(run, axis)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda v: run_variant(axis, v, seeds), todo))
    return [run_variant(axis, v, seeds) for v in todo]


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
