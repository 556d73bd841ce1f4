"""Small-scale training experiments on the synthetic set.

``run_overfit`` trains the micro network (stage widths 16/32/64) for a fixed
number of SGD steps at lr 0.001, momentum 0.9, weight decay 1e-4, batch 8, and
reports train-split IoU. ``rare_factor > 1`` duplicates images containing the
rare class; ``adaptive_weights=False`` keeps the class weights uniform.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig, TrainSchedule
from .data import AugmentPolicy
from .network import NetworkConfig
from .optim import OptimConfig
from .synthetic import SYNTHETIC_CLASSES, make_synthetic_samples
from .trainer import evaluate, train

RARE_CLASS = SYNTHETIC_CLASSES.index("big rock")


@dataclass
class OverfitResult:
    seed: int
    miou: float
    iou: np.ndarray
    seconds: float
    step_losses: list

    @property
    def rare_iou(self) -> float:
        return float(self.iou[RARE_CLASS])


def overfit_config(
    seed: int = 0, steps: int = 300, adaptive_weights: bool = True, rare_factor: int = 1
) -> TrainConfig:
    policy = AugmentPolicy.identity()
    if rare_factor > 1:
        policy = AugmentPolicy(crop=None, flip_prob=0.0, scale_range=(1.0, 1.0),
                               rare_class_id=RARE_CLASS, rare_factor=rare_factor)
    return TrainConfig(
        network=NetworkConfig.micro(len(SYNTHETIC_CLASSES), stage_channels=(16, 32, 64)),
        augment=policy,
        optim=OptimConfig(lr=0.001, momentum=0.9, weight_decay=0.0001),
        train=TrainSchedule(
            batch_size=8,
            epochs=10**6,
            max_steps=steps,
            validate_every=1,
            val_source="train",
            adaptive_weights=adaptive_weights,
            seed=seed,
        ),
    )


def run_overfit(
    seed: int = 0, steps: int = 300, adaptive_weights: bool = True, rare_factor: int = 1, n_images: int = 10
) -> OverfitResult:
    samples = make_synthetic_samples(n_images, 128, seed=seed)
    cfg = overfit_config(seed, steps, adaptive_weights, rare_factor)
    start = time.perf_counter()
    result = train(cfg, samples, list(SYNTHETIC_CLASSES))
    report = evaluate(result.model, samples, list(SYNTHETIC_CLASSES))
    return OverfitResult(seed, report.miou, report.iou, time.perf_counter() - start, result.step_losses)
