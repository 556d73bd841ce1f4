"""Feature-enhancement blocks placed between encoder and decoder.

``MiniASPP`` and ``PSA`` enhance the two shallow (high-resolution) levels,
``SPPM`` enhances the deepest level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import functional as F
from .errors import DimensionError, GeometryError, SpecError
from .nn import Conv2d, ConvBNReLU, LayerNorm, Module
from .tensor import Tensor, concat, matmul


def _check_counts(name: str, **counts: int) -> None:
    for key, value in counts.items():
        if int(value) < 1:
            raise SpecError(f"{name}.{key} must be >= 1, got {value}")


def _check_channels(x: Tensor, expected: int, block: str) -> None:
    if x.ndim != 4 or x.shape[1] != expected:
        raise DimensionError(f"{block} expects {expected} input channels, got shape {x.shape}")


@dataclass
class MiniAsppSpec:
    in_channels: int
    branch_channels: int
    out_channels: int

    def __post_init__(self):
        _check_counts("mini_aspp", in_channels=self.in_channels,
                      branch_channels=self.branch_channels, out_channels=self.out_channels)


@dataclass
class PsaSpec:
    channels: int
    reduction: int = 2

    def __post_init__(self):
        _check_counts("psa", channels=self.channels, reduction=self.reduction)
        if self.channels % self.reduction:
            raise SpecError(f"psa channels {self.channels} not divisible by reduction {self.reduction}")


@dataclass
class SppmSpec:
    in_channels: int
    branch_channels: int
    out_channels: int
    pyramid_sizes: Tuple[int, ...] = (1, 2, 4, 8)
    strip_branches: bool = True

    def __post_init__(self):
        _check_counts("sppm", in_channels=self.in_channels,
                      branch_channels=self.branch_channels, out_channels=self.out_channels)
        self.pyramid_sizes = tuple(int(s) for s in self.pyramid_sizes)
        if not self.pyramid_sizes or self.pyramid_sizes[0] < 1 or any(
            b <= a for a, b in zip(self.pyramid_sizes, self.pyramid_sizes[1:])
        ):
            raise SpecError(f"pyramid_sizes must be strictly increasing and >= 1: {self.pyramid_sizes}")


# (kernel, dilation, padding) per branch; padding keeps the spatial size
ASPP_BRANCHES = ((1, 1, 0), (3, 1, 1), (3, 2, 2))


class MiniASPP(Module):
    """Three parallel atrous branches (1x1, 3x3 d1, 3x3 d2), concatenated and
    fused back by a 1x1 channel-reduce convolution."""

    def __init__(self, spec: MiniAsppSpec, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = spec
        self.branches = [
            Conv2d(spec.in_channels, spec.branch_channels, k, padding=p, dilation=d, rng=rng)
            for k, d, p in ASPP_BRANCHES
        ]
        self.reduce = Conv2d(3 * spec.branch_channels, spec.out_channels, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self.spec.in_channels, "mini_aspp")
        feats = [branch(x).relu() for branch in self.branches]
        return self.reduce(concat(feats, axis=1)).relu()


class PSA(Module):
    """Polarized self-attention: a channel gate and a spatial gate, each a sigmoid
    of a reduced-width query/value product, applied in parallel and summed."""

    def __init__(self, spec: PsaSpec, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = spec
        c, inner = spec.channels, spec.channels // spec.reduction
        self.ch_query = Conv2d(c, 1, 1, rng=rng)
        self.ch_value = Conv2d(c, inner, 1, rng=rng)
        self.ch_up = Conv2d(inner, c, 1, rng=rng)
        self.ch_norm = LayerNorm(c)
        self.sp_query = Conv2d(c, inner, 1, rng=rng)
        self.sp_value = Conv2d(c, inner, 1, rng=rng)

    def attention(self, x: Tensor) -> Dict[str, Tensor]:
        """Return the channel gate ``[N,C,1,1]``, spatial gate ``[N,1,H,W]`` and the
        spatial softmax weights of the channel branch ``[N,HW,1]``."""
        _check_channels(x, self.spec.channels, "psa")
        n, c, h, w = x.shape
        inner = c // self.spec.reduction

        q = F.softmax(self.ch_query(x).reshape(n, h * w, 1), axis=1)
        v = self.ch_value(x).reshape(n, inner, h * w)
        z = matmul(v, q).reshape(n, inner, 1, 1)
        channel_gate = self.ch_norm(self.ch_up(z)).sigmoid()

        sq = self.sp_query(x).mean(axis=(2, 3)).reshape(n, 1, inner)
        sq = F.softmax(sq, axis=-1)
        sv = self.sp_value(x).reshape(n, inner, h * w)
        spatial_gate = matmul(sq, sv).reshape(n, 1, h, w).sigmoid()
        return {"channel_gate": channel_gate, "spatial_gate": spatial_gate, "channel_weights": q}

    def forward(self, x: Tensor, unit_gates: bool = False) -> Tensor:
        """``unit_gates`` replaces both gates by ones (composition sanity switch)."""
        if unit_gates:
            _check_channels(x, self.spec.channels, "psa")
            n, _, h, w = x.shape
            ones = Tensor(np.ones((n, 1, h, w), dtype=x.dtype))
            return self.compose(x, ones, ones)
        gates = self.attention(x)
        return self.compose(x, gates["channel_gate"], gates["spatial_gate"])

    @staticmethod
    def compose(x: Tensor, channel_gate: Tensor, spatial_gate: Tensor) -> Tensor:
        return x * channel_gate + x * spatial_gate


class SPPM(Module):
    """Strip pyramid pooling: adaptive average pools to k x k grids plus full-row and
    full-column strips, each projected by a 1x1 conv, resized back, concatenated
    with the input and fused by 1x1 conv + BN + ReLU."""

    def __init__(self, spec: SppmSpec, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = spec
        n_branches = len(spec.pyramid_sizes) + (2 if spec.strip_branches else 0)
        self.branches = [
            Conv2d(spec.in_channels, spec.branch_channels, 1, rng=rng) for _ in range(n_branches)
        ]
        self.fuse = ConvBNReLU(spec.in_channels + n_branches * spec.branch_channels, spec.out_channels, rng=rng)

    def pooled_extents(self, h: int, w: int) -> List[Tuple[int, int]]:
        extents = [(s, s) for s in self.spec.pyramid_sizes]
        if self.spec.strip_branches:
            extents += [(h, 1), (1, w)]  # row means, column means
        return extents

    def pooled(self, x: Tensor) -> List[Tensor]:
        """Pooled maps of every branch, before their projection conv."""
        _check_channels(x, self.spec.in_channels, "sppm")
        h, w = x.shape[2:]
        largest = max(self.spec.pyramid_sizes)
        if h < largest or w < largest:
            raise GeometryError(f"sppm input {h}x{w} smaller than largest pyramid bin {largest}")
        return [F.adaptive_avg_pool2d(x, ph, pw) for ph, pw in self.pooled_extents(h, w)]

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[2:]
        feats = [x]
        for conv, p in zip(self.branches, self.pooled(x)):
            feats.append(F.bilinear_upsample(conv(p).relu(), h, w))
        return self.fuse(concat(feats, axis=1))
