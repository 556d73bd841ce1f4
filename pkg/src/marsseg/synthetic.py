"""Procedural terrain-like scenes for overfitting and imbalance experiments.

Four classes: background soil (0), ellipses (1), stripes (2) and a rare blob
class (3) whose pixel share over the whole set is held near ``rare_share``.
The blob appears in every ``rare_every``-th image only (at ``rare_every`` times
the area), so oversampling images that contain it changes the class balance.
"""

from __future__ import annotations

from typing import List

import numpy as np

from .data import SegmentationSample

SYNTHETIC_CLASSES = ("soil", "rock", "track", "big rock")

# mean RGB per class
_COLORS = np.array(
    [
        [0.62, 0.42, 0.28],
        [0.32, 0.30, 0.34],
        [0.85, 0.70, 0.50],
        [0.12, 0.08, 0.10],
    ],
    dtype=np.float32,
)


def _ellipse(h, w, cy, cx, ry, rx, angle):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    y, x = yy - cy, xx - cx
    c, s = np.cos(angle), np.sin(angle)
    u, v = (x * c + y * s) / rx, (-x * s + y * c) / ry
    return u * u + v * v <= 1.0


def _stripe(h, w, rng):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    angle = rng.uniform(0, np.pi)
    offset = rng.uniform(0.25, 0.75) * (h + w) / 2
    width = rng.uniform(0.06, 0.12) * min(h, w)
    dist = xx * np.cos(angle) + yy * np.sin(angle) - offset * (np.cos(angle) + np.sin(angle)) / 1.4
    return np.abs(dist) <= width / 2


def make_scene(size: int, rng: np.random.Generator, rare_share: float = 0.02, noise: float = 0.04):
    h = w = size
    mask = np.zeros((h, w), dtype=np.uint8)
    for _ in range(int(rng.integers(1, 3))):
        mask[_stripe(h, w, rng)] = 2
    for _ in range(int(rng.integers(1, 4))):
        ry, rx = rng.uniform(0.08, 0.18, size=2) * size
        cy, cx = rng.uniform(0.2, 0.8, size=2) * size
        mask[_ellipse(h, w, cy, cx, ry, rx, rng.uniform(0, np.pi))] = 1
    if rare_share > 0:
        # rare blob: a disk sized to the requested share of the image
        r = np.sqrt(rare_share * h * w / np.pi)
        cy, cx = rng.uniform(r + 2, size - r - 2, size=2)
        mask[_ellipse(h, w, cy, cx, r, r, 0.0)] = 3

    image = _COLORS[mask].transpose(2, 0, 1).copy()
    image += rng.normal(0.0, noise, size=image.shape).astype(np.float32)
    # gentle illumination gradient so absolute color alone is not a lookup table
    ramp = np.linspace(-0.05, 0.05, w, dtype=np.float32)[None, None, :]
    image = np.clip(image + ramp * rng.choice([-1.0, 1.0]), 0.0, 1.0).astype(np.float32)
    return image, mask


def make_synthetic_samples(
    n_images: int = 10, size: int = 128, seed: int = 0, rare_share: float = 0.02, rare_every: int = 2
) -> List[SegmentationSample]:
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_images):
        share = rare_share * rare_every if i % rare_every == 0 else 0.0
        image, mask = make_scene(size, rng, share)
        samples.append(SegmentationSample(image, mask, f"synth_{i:03d}"))
    return samples


def make_share_dataset(n_images: int = 4, size: int = 100, rare_share: float = 0.02) -> List[SegmentationSample]:
    """Two-class-plus-rare masks whose rare pixel share is exactly ``rare_share``
    up to pixel quantization (rectangular rare block, left/right halves otherwise)."""
    samples = []
    rare_pixels = int(round(rare_share * size * size))
    bh = max(d for d in range(1, int(np.sqrt(rare_pixels)) + 1) if rare_pixels % d == 0)
    bw = rare_pixels // bh
    for i in range(n_images):
        mask = np.zeros((size, size), dtype=np.uint8)
        mask[:, size // 2 :] = 1
        mask[:bh, :bw] = 3
        image = _COLORS[mask].transpose(2, 0, 1).copy()
        samples.append(SegmentationSample(image, mask, f"share_{i:03d}"))
    return samples
