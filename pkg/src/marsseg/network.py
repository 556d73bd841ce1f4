"""Encoder, enhancement connectors and decoder assembled into one network."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from . import functional as F
from .blocks import PSA, SPPM, MiniASPP, MiniAsppSpec, PsaSpec, SppmSpec
from .errors import DimensionError, GeometryError, SpecError
from .nn import Conv2d, ConvBNReLU, Module
from .tensor import Tensor, concat

ENCODER_STRIDES = (4, 8, 16)


@dataclass
class EncoderSpec:
    stage_channels: Tuple[int, int, int] = (64, 128, 256)
    blocks_per_stage: Tuple[int, int, int] = (1, 1, 1)
    stem_channels: int = 32
    block: str = "basic"  # or "bottleneck"

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.blocks_per_stage = tuple(int(b) for b in self.blocks_per_stage)
        if len(self.stage_channels) != 3 or len(self.blocks_per_stage) != 3:
            raise SpecError("encoder needs exactly 3 stages")
        if min(self.stage_channels) < 1 or min(self.blocks_per_stage) < 1 or self.stem_channels < 1:
            raise SpecError("encoder channel and block counts must be >= 1")
        if self.block not in ("basic", "bottleneck"):
            raise SpecError(f"unknown encoder block {self.block!r}")


@dataclass
class NetworkConfig:
    encoder: EncoderSpec
    mini_aspp: Tuple[MiniAsppSpec, MiniAsppSpec]
    psa: Tuple[PsaSpec, PsaSpec]
    sppm: SppmSpec
    decoder_channels: Tuple[int, int]
    num_classes: int

    def __post_init__(self):
        self.mini_aspp = tuple(self.mini_aspp)
        self.psa = tuple(self.psa)
        self.decoder_channels = tuple(int(c) for c in self.decoder_channels)
        self.validate()

    def validate(self) -> None:
        if self.num_classes < 2:
            raise SpecError("num_classes must be >= 2")
        if len(self.mini_aspp) != 2 or len(self.psa) != 2 or len(self.decoder_channels) != 2:
            raise SpecError("two shallow connectors and two decoder widths are required")
        c = self.encoder.stage_channels
        for i in range(2):
            if self.mini_aspp[i].in_channels != c[i]:
                raise SpecError(f"mini_aspp.{i}.in_channels must equal encoder stage {i + 1} width {c[i]}")
            if self.psa[i].channels != self.mini_aspp[i].out_channels:
                raise SpecError(f"psa.{i}.channels must equal mini_aspp.{i}.out_channels")
        if self.sppm.in_channels != c[2]:
            raise SpecError(f"sppm.in_channels must equal encoder stage 3 width {c[2]}")
        if min(self.decoder_channels) < 1:
            raise SpecError("decoder widths must be >= 1")

    @classmethod
    def micro(
        cls,
        num_classes: int = 4,
        stage_channels: Tuple[int, int, int] = (16, 32, 64),
        pyramid_sizes: Tuple[int, ...] = (1, 2, 4, 8),
        blocks_per_stage: Tuple[int, int, int] = (1, 1, 1),
    ) -> "NetworkConfig":
        """Desk-scale configuration: every connector keeps its level's width."""
        c1, c2, c3 = stage_channels
        return cls(
            encoder=EncoderSpec(stage_channels, blocks_per_stage, stem_channels=c1),
            mini_aspp=(MiniAsppSpec(c1, max(c1 // 2, 1), c1), MiniAsppSpec(c2, max(c2 // 2, 1), c2)),
            psa=(PsaSpec(c1), PsaSpec(c2)),
            sppm=SppmSpec(c3, max(c3 // 4, 1), c3, pyramid_sizes),
            decoder_channels=(c2, c1),
            num_classes=num_classes,
        )

    @classmethod
    def full(cls, num_classes: int = 9) -> "NetworkConfig":
        """ResNet50-width encoder (bottleneck blocks 3/4/6); no pretrained weights."""
        c1, c2, c3 = 256, 512, 1024
        return cls(
            encoder=EncoderSpec((c1, c2, c3), (3, 4, 6), stem_channels=64, block="bottleneck"),
            mini_aspp=(MiniAsppSpec(c1, 128, c1), MiniAsppSpec(c2, 256, c2)),
            psa=(PsaSpec(c1), PsaSpec(c2)),
            sppm=SppmSpec(c3, 256, 512),
            decoder_channels=(256, 128),
            num_classes=num_classes,
        )


class BasicBlock(Module):
    def __init__(self, cin, cout, stride=1, rng=None):
        super().__init__()
        self.conv1 = ConvBNReLU(cin, cout, 3, stride, 1, rng=rng)
        self.conv2 = ConvBNReLU(cout, cout, 3, 1, 1, relu=False, rng=rng)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = ConvBNReLU(cin, cout, 1, stride, relu=False, rng=rng)

    def forward(self, x):
        skip = x if self.shortcut is None else self.shortcut(x)
        return (self.conv2(self.conv1(x)) + skip).relu()


class Bottleneck(Module):
    def __init__(self, cin, cout, stride=1, rng=None):
        super().__init__()
        mid = max(cout // 4, 1)
        self.reduce = ConvBNReLU(cin, mid, 1, rng=rng)
        self.conv = ConvBNReLU(mid, mid, 3, stride, 1, rng=rng)
        self.expand = ConvBNReLU(mid, cout, 1, relu=False, rng=rng)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = ConvBNReLU(cin, cout, 1, stride, relu=False, rng=rng)

    def forward(self, x):
        skip = x if self.shortcut is None else self.shortcut(x)
        return (self.expand(self.conv(self.reduce(x))) + skip).relu()


class Encoder(Module):
    """Residual encoder emitting feature maps at strides 4, 8 and 16."""

    def __init__(self, spec: EncoderSpec, rng=None):
        super().__init__()
        self.spec = spec
        block = BasicBlock if spec.block == "basic" else Bottleneck
        self.stem = ConvBNReLU(3, spec.stem_channels, 3, stride=2, padding=1, rng=rng)
        self.stages = []
        cin = spec.stem_channels
        for i, (cout, count) in enumerate(zip(spec.stage_channels, spec.blocks_per_stage)):
            blocks = []
            for k in range(count):
                blocks.append(block(cin, cout, stride=2 if (i > 0 and k == 0) else 1, rng=rng))
                cin = cout
            self.stages.append(_Sequential(blocks))

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"encoder expects [N,3,H,W] input, got {x.shape}")
        h, w = x.shape[2:]
        if h % 16 or w % 16:
            raise GeometryError(f"input extents {h}x{w} must be divisible by 16")
        y = F.max_pool2d(self.stem(x), 3, 2, 1)
        feats = []
        for stage in self.stages:
            y = stage(y)
            feats.append(y)
        return tuple(feats)


class _Sequential(Module):
    def __init__(self, layers: List[Module]):
        super().__init__()
        self.layers = layers

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class MarsSegNet(Module):
    """Encoder -> (Mini-ASPP + PSA on levels 1-2, SPPM on level 3) -> decoder.

    ``forward`` returns full-resolution logits ``[N, n, H, W]``.
    ``forward_deep`` additionally returns two auxiliary logit maps produced by
    one shared 1x1 head in training mode.
    """

    def __init__(self, config: NetworkConfig, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.config = config
        d2, d1 = config.decoder_channels
        n = config.num_classes
        self.encoder = Encoder(config.encoder, rng)
        self.aspp = [MiniASPP(s, rng) for s in config.mini_aspp]
        self.psa = [PSA(s, rng) for s in config.psa]
        self.sppm = SPPM(config.sppm, rng)
        self.fuse2 = ConvBNReLU(config.sppm.out_channels + config.psa[1].channels, d2, rng=rng)
        self.fuse1 = ConvBNReLU(d2 + config.psa[0].channels, d1, rng=rng)
        self.head = Conv2d(d1, n, 1, rng=rng)
        self.aux_proj = [ConvBNReLU(d2, d1, rng=rng), ConvBNReLU(config.sppm.out_channels, d1, rng=rng)]
        self.aux_head = Conv2d(d1, n, 1, rng=rng)
        # both auxiliary taps route through the same head object
        self.aux_heads = [self.aux_head, self.aux_head]

    def encode(self, image: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        return self.encoder(image)

    def enhance(self, f1: Tensor, f2: Tensor, f3: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        e1 = self.psa[0](self.aspp[0](f1))
        e2 = self.psa[1](self.aspp[1](f2))
        return e1, e2, self.sppm(f3)

    def _decode(self, e1, e2, e3):
        h2, w2 = e2.shape[2:]
        d2 = self.fuse2(concat([F.bilinear_upsample(e3, h2, w2), e2], axis=1))
        h1, w1 = e1.shape[2:]
        d1 = self.fuse1(concat([F.bilinear_upsample(d2, h1, w1), e1], axis=1))
        return d2, d1

    def decode(self, e1: Tensor, e2: Tensor, e3: Tensor, out_size: Optional[Tuple[int, int]] = None) -> Tensor:
        _, d1 = self._decode(e1, e2, e3)
        h, w = out_size or (4 * e1.shape[2], 4 * e1.shape[3])
        return F.bilinear_upsample(self.head(d1), h, w)

    def forward(self, image: Tensor) -> Tensor:
        h, w = image.shape[2:]
        return self.decode(*self.enhance(*self.encode(image)), out_size=(h, w))

    def forward_deep(self, image: Tensor) -> Union[Tensor, Tuple[Tensor, Tensor, Tensor]]:
        """Main logits plus two auxiliary maps in training mode; main logits only in eval."""
        h, w = image.shape[2:]
        e1, e2, e3 = self.enhance(*self.encode(image))
        d2, d1 = self._decode(e1, e2, e3)
        main = F.bilinear_upsample(self.head(d1), h, w)
        if not self.training:
            return main
        aux = [
            F.bilinear_upsample(head(proj(tap)), h, w)
            for tap, proj, head in zip((d2, e3), self.aux_proj, self.aux_heads)
        ]
        return main, aux[0], aux[1]
