"""Group linear transformation, feature shuffling and the input mixer."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat, mac_scope, matmul, permute_features, reshape, transpose
from .nn import Module, uniform_init


class GroupLinear(Module):
    """Split the last axis into ``groups`` contiguous chunks and map each chunk
    with its own weight matrix; outputs are concatenated in group order.

    ``weight`` has shape ``(groups, in_dim // groups, out_dim // groups)`` and
    ``bias`` shape ``(groups, out_dim // groups)``. With ``groups=1`` this is
    exactly a dense layer.
    """

    def __init__(self, in_dim: int, out_dim: int, groups: int, rng: np.random.Generator,
                 bias: bool = True, name: str = "glt", scope: str = "dextra"):
        if groups < 1 or in_dim % groups or out_dim % groups:
            raise ValueError(f"{name}: groups={groups} must divide in_dim={in_dim} and out_dim={out_dim}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.groups = groups
        self.name = name
        self.scope = scope
        fan_in = in_dim // groups
        self.weight = uniform_init(rng, (groups, fan_in, out_dim // groups), fan_in)
        self.bias = uniform_init(rng, (groups, out_dim // groups), fan_in) if bias else None

    @property
    def num_weights(self) -> int:
        return self.in_dim * self.out_dim // self.groups

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"{self.name}: expected last dim {self.in_dim}, got {x.shape[-1]}")
        g = self.groups
        lead = x.shape[:-1]
        with mac_scope(self.scope):
            if g == 1:
                y = matmul(x, reshape(self.weight, (self.in_dim, self.out_dim)))
            else:
                xg = transpose(reshape(x, (-1, g, self.in_dim // g)), (1, 0, 2))
                y = matmul(xg, self.weight)
                y = reshape(transpose(y, (1, 0, 2)), lead + (self.out_dim,))
        if self.bias is not None:
            y = y + reshape(self.bias, (self.out_dim,))
        return y

    def block_diagonal(self) -> np.ndarray:
        """Dense (in_dim, out_dim) matrix equivalent to this layer's weights."""
        g, k, n = self.weight.shape
        dense = np.zeros((self.in_dim, self.out_dim))
        for i in range(g):
            dense[i * k:(i + 1) * k, i * n:(i + 1) * n] = self.weight.data[i]
        return dense


def shuffle_permutation(d: int, groups: int) -> np.ndarray:
    """Index map of the channel shuffle: output ``j*groups + i`` reads input ``i*(d//groups) + j``."""
    if groups < 1 or d % groups:
        raise ValueError(f"groups={groups} does not divide feature dim {d}")
    return np.arange(d).reshape(groups, d // groups).T.reshape(-1)


def feature_shuffle(x: Tensor, groups: int) -> Tensor:
    if groups == 1:
        if x.shape[-1] < 1:
            raise ValueError("empty feature axis")
        return x
    return permute_features(x, shuffle_permutation(x.shape[-1], groups))


def input_mixer(x: Tensor, y_prev: Tensor, groups: int, prev_groups: int | None = None) -> Tensor:
    """Group-wise concatenation of a layer output with the block input.

    Group ``i`` of the result is ``[y_prev chunk i, x chunk i]``. When either
    side of the connection is dense (``groups == 1`` or ``prev_groups == 1``)
    the grouping carries no information and this is plain ``[y_prev, x]``.
    """
    if groups == 1 or prev_groups == 1:
        return concat([y_prev, x], axis=-1)
    d_in, d_prev = x.shape[-1], y_prev.shape[-1]
    if d_in % groups or d_prev % groups:
        raise ValueError(f"groups={groups} must divide both input dims ({d_in}, {d_prev})")
    lead = x.shape[:-1]
    xg = reshape(x, lead + (groups, d_in // groups))
    yg = reshape(y_prev, lead + (groups, d_prev // groups))
    return reshape(concat([yg, xg], axis=-1), lead + (d_in + d_prev,))
