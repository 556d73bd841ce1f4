"""SGD with classical momentum and L2 weight decay folded into the gradient."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import StateError


@dataclass
class OptimConfig:
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0001

    def __post_init__(self):
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("optimizer hyperparameters must be nonnegative")


@dataclass
class OptimState:
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0001
    velocity: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, cfg: Optional[OptimConfig] = None) -> "OptimState":
        cfg = cfg or OptimConfig()
        return cls(cfg.lr, cfg.momentum, cfg.weight_decay, [np.zeros_like(p.data) for p in params])


def sgd_step(params: Sequence, grads: Sequence[Optional[np.ndarray]], state: OptimState) -> None:
    """In-place update of every parameter:

    ``g' = g + wd * theta``; ``v = momentum * v + g'``; ``theta -= lr * v``.
    A ``None`` gradient counts as zero.
    """
    if len(params) != len(grads) or len(params) != len(state.velocity):
        raise StateError(
            f"{len(params)} params, {len(grads)} grads, {len(state.velocity)} velocity buffers"
        )
    for p, g, v in zip(params, grads, state.velocity):
        if v.shape != p.data.shape or (g is not None and np.shape(g) != p.data.shape):
            raise StateError(f"shape mismatch for parameter of shape {p.data.shape}")
        step = p.data * state.weight_decay if g is None else g + state.weight_decay * p.data
        v *= state.momentum
        v += step
        p.data -= state.lr * v
