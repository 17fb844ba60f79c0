"""Block-wise scaling of DExTra depth and width across a stack of blocks."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .dextra import ConfigError, as_fraction, round_half_up


@dataclass(frozen=True)
class ScalingConfig:
    """Network-wide depth range and base width multiplier.

    ``B`` defaults to ``N_max`` (the larger of the two when the range is inverted).
    Setting ``N_min == N_max`` gives uniform scaling.
    """

    N_min: int
    N_max: int
    m_w: Fraction = Fraction(2)
    B: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "m_w", as_fraction(self.m_w))
        if self.B is None:
            object.__setattr__(self, "B", max(self.N_min, self.N_max))
        if self.B < 1:
            raise ConfigError(f"number of blocks must be >= 1, got B={self.B}")
        if min(self.N_min, self.N_max) < 2:
            raise ConfigError(f"DExTra depths must be >= 2, got N_min={self.N_min}, N_max={self.N_max}")


@dataclass(frozen=True)
class BlockScale:
    b: int
    N: int
    m_w: Fraction


def blockwise_plan(cfg: ScalingConfig) -> list[BlockScale]:
    """Per-block (depth, width multiplier), linear in the block index.

    Depths are rounded half-up; width multipliers stay exact fractions.
    """
    span = cfg.N_max - cfg.N_min
    plan = []
    for b in range(cfg.B):
        t = Fraction(b, cfg.B - 1) if cfg.B > 1 else Fraction(0)
        depth = round_half_up(cfg.N_min + span * t)
        width = cfg.m_w + Fraction(span) * t / cfg.N_min
        plan.append(BlockScale(b, depth, width))
    return plan


def uniform_plan(N: int, m_w, B: int) -> list[BlockScale]:
    return blockwise_plan(ScalingConfig(N, N, m_w, B))


def network_depth(plan: list[BlockScale], decoder: bool = False) -> int:
    """Sum of N^b + 4 over blocks; decoder blocks add 2 for the source-target unit."""
    if not plan:
        raise ConfigError("empty block plan")
    per_block = 6 if decoder else 4
    return sum(s.N + per_block for s in plan)


def baseline_depth(B: int, decoder: bool = False) -> int:
    """Depth of a standard transformer stack with B blocks (4 per block, 6 with source-target attention)."""
    return (6 if decoder else 4) * B
