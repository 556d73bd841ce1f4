"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import DataError, DimensionError, GeometryError
from .losses import IGNORE_INDEX


def check_images(X, divisible_by: int = 16) -> np.ndarray:
    """Coerce ``X`` to a float32 ``[N,3,H,W]`` array.

    Accepts ``[N,3,H,W]``, ``[N,H,W,3]`` (channels last) and ``[N,H,W]``
    grayscale, which is replicated to three channels.
    """
    X = np.asarray(X)
    if X.dtype.kind not in "fiu":
        raise DataError(f"images must be numeric, got dtype {X.dtype}")
    if X.ndim == 3:
        X = np.repeat(X[:, None], 3, axis=1)
    elif X.ndim == 4 and X.shape[1] != 3 and X.shape[-1] == 3:
        X = X.transpose(0, 3, 1, 2)
    if X.ndim != 4 or X.shape[1] != 3:
        raise DimensionError(f"expected images of shape [N,3,H,W], got {X.shape}")
    if X.shape[0] == 0:
        raise DataError("no images given")
    if X.dtype.kind in "iu":
        X = X.astype(np.float32) / 255.0
    X = np.ascontiguousarray(X, dtype=np.float32)
    if not np.all(np.isfinite(X)):
        raise DataError("images contain non-finite values")
    h, w = X.shape[2:]
    if divisible_by and (h % divisible_by or w % divisible_by):
        raise GeometryError(f"image extents {h}x{w} must be divisible by {divisible_by}")
    return X


def check_masks(y, images: Optional[np.ndarray] = None, num_classes: Optional[int] = None) -> np.ndarray:
    """Coerce ``y`` to a uint8 ``[N,H,W]`` label array; 255 marks ignored pixels."""
    y = np.asarray(y)
    if y.dtype.kind not in "iu":
        if y.dtype.kind == "f" and np.all(np.mod(y, 1) == 0):
            y = y.astype(np.int64)
        else:
            raise DataError(f"masks must hold integer class ids, got dtype {y.dtype}")
    if y.ndim != 3:
        raise DimensionError(f"expected masks of shape [N,H,W], got {y.shape}")
    if images is not None and (y.shape[0] != images.shape[0] or y.shape[1:] != images.shape[2:]):
        raise DimensionError(f"masks {y.shape} do not match images {images.shape}")
    if y.min() < 0 or y.max() > IGNORE_INDEX:
        raise DataError("mask values must lie in [0, 255]")
    valid = y[y != IGNORE_INDEX]
    if num_classes is not None and valid.size and valid.max() >= num_classes:
        raise DataError(f"mask contains class id {int(valid.max())} but only {num_classes} classes exist")
    return y.astype(np.uint8)
