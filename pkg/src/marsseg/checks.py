"""Finite-difference gradient-check suite over every primitive and block.

All cases run in float64 on small random inputs; the same table backs the
``marsseg gradcheck`` command and the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import functional as F
from .blocks import PSA, SPPM, MiniASPP, MiniAsppSpec, PsaSpec, SppmSpec
from .gradcheck import finite_diff_check
from .losses import ClassWeightState, LossConfig, combined_loss, dice_loss, focal_loss
from .network import MarsSegNet, NetworkConfig
from .nn import BatchNorm2d, LayerNorm
from .tensor import Tensor, concat, default_dtype, matmul


@dataclass
class CheckRow:
    name: str
    max_rel_error: float
    passed: bool
    entries: int


def _projection(rng, shape):
    """Fixed random weights turning any output into a scalar with nontrivial gradient."""
    return Tensor(rng.standard_normal(shape))


def _scalar(out: Tensor, proj: Tensor) -> Tensor:
    return (out * proj).sum()


def _cases(rng: np.random.Generator) -> List[Tuple[str, Callable[[], Tuple[Callable, Tensor, list, Optional[int]]]]]:
    def randn(*shape):
        return Tensor(rng.standard_normal(shape))

    def away_from_zero(*shape):
        x = rng.standard_normal(shape)
        return Tensor(np.sign(x) * (0.2 + np.abs(x)))

    def unary(fn, x):
        proj = _projection(rng, fn(x).shape)
        return lambda t: _scalar(fn(t), proj), x, None, None

    def binary(fn, a, b):
        proj = _projection(rng, fn(a, b).shape)
        return lambda t: _scalar(fn(t, b), proj), a, [a, b], None

    def conv_case(stride, dilation, padding):
        x, w, b = randn(2, 3, 9, 9), randn(4, 3, 3, 3), randn(4)
        fn = lambda t: F.conv2d(t, w, b, stride, dilation, padding)
        proj = _projection(rng, fn(x).shape)
        return lambda t: _scalar(fn(t), proj), x, [x, w, b], None

    def bn_case():
        bn = BatchNorm2d(4)
        x = randn(2, 4, 5, 5)
        proj = _projection(rng, x.shape)
        return lambda t: _scalar(bn(t), proj), x, [x, bn.weight, bn.bias], None

    def ln_case():
        ln = LayerNorm(4)
        x = randn(2, 4, 3, 3)
        proj = _projection(rng, x.shape)
        return lambda t: _scalar(ln(t), proj), x, [x, ln.weight, ln.bias], None

    def block_case(module, shape):
        x = randn(*shape)
        proj = _projection(rng, module(x).shape)
        params = module.parameters()
        return lambda t: _scalar(module(t), proj), x, [x] + params, 24

    def loss_case(kind):
        n = 3
        logits = randn(2, n, 6, 6)
        target = rng.integers(0, n, size=(2, 6, 6)).astype(np.uint8)
        target[0, 0, :3] = 255
        weights = rng.dirichlet(np.ones(n))
        if kind == "focal":
            return (lambda t: focal_loss(t, target, weights, 2.0)), logits, None, None
        if kind == "dice":
            return (lambda t: dice_loss(t, target, weights, 1.0)), logits, None, None
        state = ClassWeightState(weights, np.zeros(n), 0.1)
        aux = [randn(2, n, 6, 6), randn(2, n, 6, 6)]
        return (lambda t: combined_loss([t] + aux, target, state, LossConfig())), logits, [logits] + aux, None

    def network_case():
        cfg = NetworkConfig.micro(3, stage_channels=(8, 16, 32), pyramid_sizes=(1, 2))
        net = MarsSegNet(cfg, seed=int(rng.integers(1 << 31)))
        x = randn(1, 3, 32, 32)
        proj = _projection(rng, (1, 3, 32, 32))
        named = dict(net.named_parameters())
        wrt = [x] + [named[k] for k in ("encoder.stem.conv.weight", "aspp.0.reduce.weight",
                                        "psa.1.ch_up.weight", "sppm.branches.1.weight", "head.bias")]
        return lambda t: _scalar(net(t), proj), x, wrt, 16

    return [
        ("add", lambda: binary(lambda a, b: a + b, randn(3, 4), randn(4))),
        ("mul", lambda: binary(lambda a, b: a * b, randn(3, 4), randn(3, 1))),
        ("div", lambda: binary(lambda a, b: a / b, randn(3, 4), away_from_zero(3, 4))),
        ("power", lambda: unary(lambda t: (t * t + 0.5) ** 1.5, randn(3, 4))),
        ("exp", lambda: unary(lambda t: t.exp(), randn(3, 4))),
        ("log", lambda: unary(lambda t: (t * t + 0.1).log(), randn(3, 4))),
        ("sqrt", lambda: unary(lambda t: (t * t + 0.1).sqrt(), randn(3, 4))),
        ("relu", lambda: unary(lambda t: t.relu(), away_from_zero(3, 4))),
        ("sigmoid", lambda: unary(lambda t: t.sigmoid(), randn(3, 4))),
        ("sum", lambda: unary(lambda t: t.sum(axis=1), randn(3, 4))),
        ("mean", lambda: unary(lambda t: t.mean(axis=(0, 2)), randn(2, 3, 4))),
        ("reshape_transpose", lambda: unary(lambda t: t.reshape(4, 6).transpose((1, 0)), randn(2, 3, 4))),
        ("concat", lambda: binary(lambda a, b: concat([a, b], axis=1), randn(2, 3, 4), randn(2, 2, 4))),
        ("matmul", lambda: binary(matmul, randn(2, 3, 4), randn(2, 4, 5))),
        ("conv2d", lambda: conv_case(1, 1, 1)),
        ("conv2d_strided", lambda: conv_case(2, 1, 1)),
        ("conv2d_dilated", lambda: conv_case(1, 2, 2)),
        ("max_pool2d", lambda: unary(lambda t: F.max_pool2d(t, 3, 2, 1), randn(2, 3, 8, 8))),
        ("batch_norm", bn_case),
        ("layer_norm", ln_case),
        ("softmax", lambda: unary(lambda t: F.softmax(t, axis=1), randn(2, 4, 3))),
        ("log_softmax", lambda: unary(lambda t: F.log_softmax(t, axis=1), randn(2, 4, 3))),
        ("adaptive_avg_pool2d", lambda: unary(lambda t: F.adaptive_avg_pool2d(t, 3, 2), randn(2, 3, 7, 5))),
        ("bilinear_upsample", lambda: unary(lambda t: F.bilinear_upsample(t, 9, 7), randn(2, 3, 4, 3))),
        ("mini_aspp", lambda: block_case(MiniASPP(MiniAsppSpec(8, 4, 8), rng), (2, 8, 8, 8))),
        ("psa", lambda: block_case(PSA(PsaSpec(8), rng), (2, 8, 8, 8))),
        ("sppm", lambda: block_case(SPPM(SppmSpec(8, 4, 8, (1, 2, 4, 8)), rng), (2, 8, 16, 16))),
        ("focal_loss", lambda: loss_case("focal")),
        ("dice_loss", lambda: loss_case("dice")),
        ("combined_loss", lambda: loss_case("combined")),
        ("network", network_case),
    ]


CHECK_NAMES = tuple(name for name, _ in _cases(np.random.default_rng(0)))


def run_gradcheck_suite(seed: int = 0, tol: float = 1e-4, only: Optional[List[str]] = None) -> List[CheckRow]:
    """Run every case (or those named in ``only``) and return one row per case."""
    rows = []
    with default_dtype(np.float64):
        rng = np.random.default_rng(seed)
        for name, build in _cases(rng):
            if only is not None and name not in only:
                continue
            fn, x, wrt, max_entries = build()
            report = finite_diff_check(fn, x, tol=tol, wrt=wrt, max_entries=max_entries, seed=seed)
            rows.append(CheckRow(name, report.max_rel_error, report.passed, report.entries_checked))
    return rows


def format_rows(rows: List[CheckRow]) -> str:
    width = max(len(r.name) for r in rows)
    lines = [f"{'check':<{width}}  {'max_rel_err':>11}  {'entries':>7}  result"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.max_rel_error:11.3e}  {r.entries:7d}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
