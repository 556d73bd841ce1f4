"""scikit-learn style wrapper around the training loop."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import functional as F
from .config import TrainConfig, TrainSchedule
from .data import AugmentPolicy, SegmentationSample
from .losses import LossConfig
from .metrics import ConfusionMatrix, miou
from .network import NetworkConfig
from .optim import OptimConfig
from .tensor import Tensor
from .trainer import predict_logits, train
from .validation import check_images, check_masks


class MarsSegSegmenter(BaseEstimator):
    """Semantic segmenter with the ``fit`` / ``predict`` / ``score`` protocol.

    ``X`` is an image array ``[N,3,H,W]`` (or channels-last / grayscale),
    ``y`` an integer mask array ``[N,H,W]`` with 255 for ignored pixels.
    ``preset="micro"`` builds the desk-scale network from ``stage_channels`` and
    ``pyramid_sizes`` (inputs must be at least 16 times the largest bin);
    ``preset="full"`` builds the ResNet50-width network.
    """

    def __init__(
        self,
        num_classes: Optional[int] = None,
        preset: str = "micro",
        stage_channels: Sequence[int] = (16, 32, 64),
        pyramid_sizes: Sequence[int] = (1, 2, 4, 8),
        lr: float = 0.001,
        momentum: float = 0.9,
        weight_decay: float = 0.0001,
        batch_size: int = 8,
        epochs: int = 100,
        max_steps: Optional[int] = None,
        validate_every: int = 1,
        adaptive_weights: bool = True,
        gamma: float = 2.0,
        dice_eps: float = 1.0,
        alpha: float = 0.1,
        augment: Optional[AugmentPolicy] = None,
        class_names: Optional[Sequence[str]] = None,
        random_state: int = 0,
    ):
        self.num_classes = num_classes
        self.preset = preset
        self.stage_channels = stage_channels
        self.pyramid_sizes = pyramid_sizes
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_steps = max_steps
        self.validate_every = validate_every
        self.adaptive_weights = adaptive_weights
        self.gamma = gamma
        self.dice_eps = dice_eps
        self.alpha = alpha
        self.augment = augment
        self.class_names = class_names
        self.random_state = random_state

    def _config(self, n: int) -> TrainConfig:
        if self.preset == "micro":
            network = NetworkConfig.micro(n, tuple(self.stage_channels), tuple(self.pyramid_sizes))
        elif self.preset == "full":
            network = NetworkConfig.full(n)
        else:
            raise ValueError(f"unknown preset {self.preset!r}")
        return TrainConfig(
            network=network,
            loss=LossConfig(self.gamma, self.dice_eps, self.alpha),
            augment=self.augment if self.augment is not None else AugmentPolicy.identity(),
            optim=OptimConfig(self.lr, self.momentum, self.weight_decay),
            train=TrainSchedule(
                batch_size=self.batch_size,
                epochs=self.epochs,
                max_steps=self.max_steps,
                validate_every=self.validate_every,
                val_source="train",
                adaptive_weights=self.adaptive_weights,
                seed=self.random_state,
            ),
        )

    def fit(self, X, y):
        X = check_images(X)
        y = check_masks(y, X)
        valid = y[y != 255]
        n = self.num_classes or (int(valid.max()) + 1 if valid.size else 2)
        n = max(n, 2)
        check_masks(y, num_classes=n)
        names = list(self.class_names) if self.class_names is not None else [f"class_{k}" for k in range(n)]
        samples = [SegmentationSample(X[i], y[i], f"sample_{i}") for i in range(len(X))]
        result = train(self._config(n), samples, names)
        self.model_ = result.model
        self.n_classes_ = n
        self.classes_ = np.arange(n)
        self.class_names_ = names
        self.history_ = result.history
        self.step_losses_ = result.step_losses
        self.weight_state_ = result.checkpoint.weight_state
        self.checkpoint_ = result.checkpoint
        return self

    def decision_function(self, X) -> np.ndarray:
        """Raw logits ``[N,n,H,W]``."""
        check_is_fitted(self, "model_")
        return predict_logits(self.model_, check_images(X), self.batch_size)

    def predict_proba(self, X) -> np.ndarray:
        return F.softmax(Tensor(self.decision_function(X)), axis=1).data

    def predict(self, X) -> np.ndarray:
        return self.decision_function(X).argmax(axis=1).astype(np.uint8)

    def score(self, X, y) -> float:
        """Mean IoU over classes present in ``y`` or the prediction."""
        X = check_images(X)
        y = check_masks(y, X, self.n_classes_)
        conf = ConfusionMatrix(self.n_classes_)
        conf.update(self.predict(X), y)
        return float(miou(conf))
