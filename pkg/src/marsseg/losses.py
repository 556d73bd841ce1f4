"""Focal and dice losses, their deep-supervised average, and adaptive class weights."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import functional as F
from .errors import ContractError, DataError, DimensionError, UndefinedMeanError
from .tensor import Tensor, exp

IGNORE_INDEX = 255


@dataclass
class LossConfig:
    gamma: float = 2.0
    dice_eps: float = 1.0
    alpha: float = 0.1
    deep_supervision_levels: int = 3

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.dice_eps <= 0 or self.alpha <= 0:
            raise ValueError("dice_eps and alpha must be > 0")
        if self.deep_supervision_levels < 1:
            raise ValueError("deep_supervision_levels must be >= 1")


@dataclass
class ClassWeightState:
    """Per-class loss weights (summing to 1) and the IoU vector they came from."""

    weights: np.ndarray
    source_iou: np.ndarray
    alpha: float

    @classmethod
    def uniform(cls, num_classes: int, alpha: float = 0.1) -> "ClassWeightState":
        return cls(
            weights=np.full(num_classes, 1.0 / num_classes),
            source_iou=np.zeros(num_classes),
            alpha=alpha,
        )

    @property
    def num_classes(self) -> int:
        return len(self.weights)


def normalize_weights(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    return raw / raw.sum()


def update_class_weights(iou, alpha: float = 0.1) -> ClassWeightState:
    """``w_k ∝ 1 / (iou_k + alpha)``, normalized to sum to one.

    Poorly segmented classes get larger weights; ``alpha`` caps the weight a
    class with IoU 0 can receive.
    """
    iou = np.asarray(iou, dtype=np.float64)
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    if iou.ndim != 1 or np.any(~np.isfinite(iou)) or np.any((iou < 0) | (iou > 1)):
        raise ValueError(f"iou must be a vector of values in [0, 1], got {iou}")
    return ClassWeightState(weights=normalize_weights(1.0 / (iou + alpha)), source_iou=iou.copy(), alpha=alpha)


def _prepare_target(logits: Tensor, target, weights):
    if logits.ndim != 4:
        raise DimensionError(f"logits must be [N,n,H,W], got {logits.shape}")
    n_classes = logits.shape[1]
    target = np.asarray(target)
    if target.shape != (logits.shape[0],) + logits.shape[2:]:
        raise DimensionError(f"target shape {target.shape} does not match logits {logits.shape}")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (n_classes,):
        raise DimensionError(f"need {n_classes} class weights, got shape {weights.shape}")
    valid = target != IGNORE_INDEX
    if np.any((target[valid] < 0) | (target[valid] >= n_classes)):
        raise DataError(f"target contains class ids outside [0, {n_classes})")
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise UndefinedMeanError("every target pixel is ignored")
    safe = np.where(valid, target, 0)
    onehot = (safe[:, None] == np.arange(n_classes)[None, :, None, None]) & valid[:, None]
    return onehot.astype(logits.dtype), valid, safe, weights, n_valid


def focal_loss(logits: Tensor, target, weights, gamma: float = 2.0) -> Tensor:
    """Class-weighted focal loss averaged over non-ignored pixels.

    Per pixel: ``w_t * (1 - p_t)**gamma * -log(p_t)`` with ``p_t`` the softmax
    probability of the true class.
    """
    onehot, valid, safe, weights, n_valid = _prepare_target(logits, target, weights)
    log_pt = (F.log_softmax(logits, axis=1) * Tensor(onehot)).sum(axis=1)
    pixel_w = np.where(valid, weights[safe], 0.0).astype(logits.dtype)
    per_pixel = log_pt * Tensor(-pixel_w)
    if gamma != 0:
        per_pixel = per_pixel * (1.0 - exp(log_pt)) ** gamma
    return per_pixel.sum() * (1.0 / n_valid)


def dice_loss(logits: Tensor, target, weights, eps: float = 1.0) -> Tensor:
    """``1 - sum_k w_k (2 sum p_k y_k + eps) / (sum p_k + sum y_k + eps)`` over valid pixels."""
    onehot, valid, _, weights, _ = _prepare_target(logits, target, weights)
    probs = F.softmax(logits, axis=1) * Tensor(valid[:, None].astype(logits.dtype))
    axes = (0, 2, 3)
    inter = (probs * Tensor(onehot)).sum(axis=axes)
    denom = probs.sum(axis=axes) + Tensor(onehot.sum(axis=axes) + eps)
    coef = (inter * 2.0 + eps) / denom
    return 1.0 - (coef * Tensor(weights.astype(logits.dtype))).sum()


def combined_loss(
    outputs: Sequence[Tensor],
    target,
    state: ClassWeightState,
    cfg: LossConfig = LossConfig(),
) -> Tensor:
    """Average of ``focal + dice`` over the deep-supervision outputs."""
    outputs = list(outputs)
    if len(outputs) != cfg.deep_supervision_levels:
        raise ContractError(f"expected {cfg.deep_supervision_levels} outputs, got {len(outputs)}")
    full = outputs[0].shape
    if any(o.shape != full for o in outputs):
        raise DimensionError("all supervised outputs must share the full-resolution shape")
    total = None
    for out in outputs:
        level = focal_loss(out, target, state.weights, cfg.gamma) + dice_loss(out, target, state.weights, cfg.dice_eps)
        total = level if total is None else total + level
    return total * (1.0 / len(outputs))
