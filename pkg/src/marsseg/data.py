"""Dataset trees, mask encoding, augmentation and rare-class oversampling.

Dataset layout::

    root/classes.txt        one class name per line; line number = class index
    root/images/<stem>.png  RGB or grayscale image
    root/masks/<stem>.png   8-bit single-channel mask, value = class index, 255 = ignore
"""

from __future__ import annotations

import copy
import io
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .errors import DataError, ManifestError
from .functional import bilinear_matrix
from .losses import IGNORE_INDEX

MARS_SEG_CLASSES = (
    "Martian soil",
    "Sands",
    "Gravel",
    "Bedrock",
    "Rocks",
    "Tracks",
    "Shadows",
    "Background",
    "Unknown",
)
AI4MARS_CLASSES = ("Soil", "Bedrock", "Sand", "Big Rock")

PathLike = Union[str, Path]


@dataclass
class SegmentationSample:
    image: np.ndarray  # [3, H, W] float32 in [0, 1]
    mask: np.ndarray  # [H, W] uint8
    id: str = ""

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise DataError(f"{self.id}: image must be [3,H,W], got {self.image.shape}")
        if self.mask.shape != self.image.shape[1:]:
            raise DataError(f"{self.id}: mask {self.mask.shape} and image {self.image.shape[1:]} extents differ")

    @property
    def size(self) -> Tuple[int, int]:
        return self.mask.shape


# -- file formats ------------------------------------------------------------

def to_chw(arr: np.ndarray) -> np.ndarray:
    """HxW or HxWxC uint8/float array -> [3, H, W] float32 in [0, 1]."""
    arr = np.asarray(arr)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    arr = arr.astype(np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    return np.ascontiguousarray(arr[:, :, :3].transpose(2, 0, 1))


def read_image(path: PathLike) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return to_chw(np.asarray(im))


def write_image(path: PathLike, image: np.ndarray) -> None:
    hwc = np.clip(np.round(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(hwc, mode="RGB").save(path)


def encode_mask(mask: np.ndarray) -> bytes:
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.min(initial=0) < 0 or mask.max(initial=0) > 255:
        raise DataError("mask must be a 2-d array of values in [0, 255]")
    buf = io.BytesIO()
    Image.fromarray(mask.astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def decode_mask(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return _mask_array(im)


def _mask_array(im: Image.Image) -> np.ndarray:
    # palette PNGs store indices directly
    if im.mode not in ("L", "P"):
        raise DataError(f"mask must be single-channel, got mode {im.mode}")
    return np.asarray(im, dtype=np.uint8).copy()


def save_mask(path: PathLike, mask: np.ndarray) -> None:
    Path(path).write_bytes(encode_mask(mask))


def load_mask(path: PathLike) -> np.ndarray:
    with Image.open(path) as im:
        return _mask_array(im)


# Overlay colors keyed by class index; indices past the table wrap around.
# Ignored pixels (255) are drawn black.
OVERLAY_PALETTE = np.array(
    [
        [230, 159, 0],
        [86, 180, 233],
        [0, 158, 115],
        [240, 228, 66],
        [0, 114, 178],
        [213, 94, 0],
        [204, 121, 167],
        [128, 128, 128],
        [255, 255, 255],
        [153, 0, 0],
    ],
    dtype=np.uint8,
)


def colorize(mask: np.ndarray) -> np.ndarray:
    """Index mask -> HxWx3 uint8 using :data:`OVERLAY_PALETTE`."""
    mask = np.asarray(mask)
    rgb = OVERLAY_PALETTE[mask.astype(np.int64) % len(OVERLAY_PALETTE)]
    rgb[mask == IGNORE_INDEX] = 0
    return rgb


def overlay(image: np.ndarray, mask: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend the colorized mask over a ``[3,H,W]`` image; returns HxWx3 uint8."""
    base = np.asarray(image, dtype=np.float64).transpose(1, 2, 0) * 255.0
    blend = (1.0 - alpha) * base + alpha * colorize(mask).astype(np.float64)
    return np.clip(np.round(blend), 0, 255).astype(np.uint8)


def read_class_table(path: PathLike) -> List[str]:
    names = [line.strip() for line in Path(path).read_text().splitlines()]
    return [n for n in names if n]


def write_class_table(path: PathLike, names: Sequence[str]) -> None:
    Path(path).write_text("".join(f"{n}\n" for n in names))


def write_dataset(root: PathLike, samples: Sequence[SegmentationSample], class_names: Sequence[str]) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    write_class_table(root / "classes.txt", class_names)
    for s in samples:
        write_image(root / "images" / f"{s.id}.png", s.image)
        save_mask(root / "masks" / f"{s.id}.png", s.mask)
    return root


def read_palette(path: PathLike) -> Dict[Tuple[int, int, int], int]:
    """Parse ``R G B index`` lines (``#`` starts a comment)."""
    table = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 'R G B index', got {line!r}")
        r, g, b, idx = (int(p) for p in parts)
        if not all(0 <= v <= 255 for v in (r, g, b, idx)):
            raise DataError(f"{path}:{lineno}: values must be in [0, 255]")
        table[(r, g, b)] = idx
    return table


def palette_to_index(rgb: np.ndarray, palette: Dict[Tuple[int, int, int], int]) -> np.ndarray:
    """Map an HxWx3 color mask to class indices; unlisted colors become ignore."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim == 2:
        rgb = np.repeat(rgb[:, :, None], 3, axis=2)
    keys = (rgb[..., 0].astype(np.int64) << 16) | (rgb[..., 1].astype(np.int64) << 8) | rgb[..., 2]
    out = np.full(keys.shape, IGNORE_INDEX, dtype=np.uint8)
    for (r, g, b), idx in palette.items():
        out[keys == ((r << 16) | (g << 8) | b)] = idx
    return out


def convert_masks(src_dir: PathLike, dst_dir: PathLike, palette_path: PathLike) -> int:
    """Convert every color mask PNG in ``src_dir`` to an index mask in ``dst_dir``."""
    palette = read_palette(palette_path)
    dst = Path(dst_dir)
    dst.mkdir(parents=True, exist_ok=True)
    count = 0
    for path in sorted(Path(src_dir).glob("*.png")):
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"))
        save_mask(dst / path.name, palette_to_index(rgb, palette))
        count += 1
    return count


# -- manifests -----------------------------------------------------------------

@dataclass
class DatasetManifest:
    root: Path
    class_names: List[str]
    pairs: Dict[str, Tuple[Path, Path]]
    splits: Dict[str, List[str]]
    seed: int = 0
    split_ratio: float = 0.8

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def ids(self, split: str) -> List[str]:
        if split == "all":
            return sorted(self.pairs)
        if split not in self.splits:
            raise KeyError(f"unknown split {split!r}; have {sorted(self.splits)}")
        return list(self.splits[split])

    def load(self, sample_id: str) -> SegmentationSample:
        image_path, mask_path = self.pairs[sample_id]
        image, mask = read_image(image_path), load_mask(mask_path)
        if image.shape[1:] != mask.shape:
            raise DataError(f"{sample_id}: image {image.shape[1:]} and mask {mask.shape} extents differ")
        return SegmentationSample(image, mask, sample_id)

    def samples(self, split: str) -> List[SegmentationSample]:
        cache = {}
        out = []
        for sid in self.ids(split):
            if sid not in cache:
                cache[sid] = self.load(sid)
            out.append(cache[sid])
        return out


def load_manifest(
    root: PathLike,
    class_spec: Optional[Union[PathLike, Sequence[str]]] = None,
    split_ratio: float = 0.8,
    seed: int = 0,
    check_masks: bool = True,
) -> DatasetManifest:
    """Pair ``images/`` with ``masks/`` by stem and split them train/test.

    The split is a seeded permutation of the sorted stems, so it is identical
    across runs for a given seed.
    """
    root = Path(root)
    if not 0.0 <= split_ratio <= 1.0:
        raise ValueError("split_ratio must be in [0, 1]")
    if class_spec is None:
        class_spec = root / "classes.txt"
    if isinstance(class_spec, (str, Path)):
        if not Path(class_spec).exists():
            raise ManifestError(f"class table {class_spec} not found")
        class_names = read_class_table(class_spec)
    else:
        class_names = list(class_spec)
    if not class_names:
        raise ManifestError("class table is empty")

    images = {p.stem: p for p in sorted((root / "images").glob("*.png"))}
    masks = {p.stem: p for p in sorted((root / "masks").glob("*.png"))}
    orphans = sorted(set(images) ^ set(masks))
    if orphans:
        raise ManifestError(f"unpaired files (no matching image or mask): {', '.join(orphans)}")

    stems = sorted(images)
    pairs = {s: (images[s], masks[s]) for s in stems}
    if check_masks:
        n = len(class_names)
        for s in stems:
            values = np.unique(load_mask(masks[s]))
            bad = values[(values >= n) & (values != IGNORE_INDEX)]
            if bad.size:
                raise DataError(f"mask {s} contains class ids {bad.tolist()} outside [0, {n})")

    perm = np.random.default_rng(seed).permutation(len(stems))
    n_train = int(round(split_ratio * len(stems)))
    train = sorted(stems[i] for i in perm[:n_train])
    test = sorted(stems[i] for i in perm[n_train:])
    if stems and not test:
        warnings.warn("split leaves the test set empty", UserWarning, stacklevel=2)
    return DatasetManifest(root, class_names, pairs, {"train": train, "test": test}, seed, split_ratio)


def oversample_rare(manifest: DatasetManifest, class_id: int, factor: int) -> DatasetManifest:
    """Duplicate training entries whose mask contains ``class_id`` ``factor - 1`` extra times."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    out = copy.deepcopy(manifest)
    if factor == 1:
        return out
    train = manifest.splits["train"]
    hits = [sid for sid in dict.fromkeys(train) if np.any(load_mask(manifest.pairs[sid][1]) == class_id)]
    if not hits:
        warnings.warn(f"class {class_id} does not occur in any training mask", UserWarning, stacklevel=2)
        return out
    out.splits["train"] = list(train) + [sid for sid in hits for _ in range(factor - 1)]
    return out


def oversample_samples(samples: Sequence[SegmentationSample], class_id: int, factor: int) -> List[SegmentationSample]:
    """In-memory counterpart of :func:`oversample_rare`."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    samples = list(samples)
    hits = [s for s in samples if np.any(s.mask == class_id)]
    if factor > 1 and not hits:
        warnings.warn(f"class {class_id} does not occur in any mask", UserWarning, stacklevel=2)
    return samples + [s for s in hits for _ in range(factor - 1)]


def mask_frequency(masks, num_classes: int) -> np.ndarray:
    counts = np.zeros(num_classes, dtype=np.int64)
    for m in masks:
        m = np.asarray(m)
        m = m[m != IGNORE_INDEX]
        counts += np.bincount(m.ravel(), minlength=num_classes)[:num_classes]
    total = counts.sum()
    return counts / total if total else np.zeros(num_classes)


def class_frequency(manifest: DatasetManifest, split: str = "train") -> np.ndarray:
    """Per-class pixel fractions over the split's non-ignored pixels."""
    return mask_frequency((load_mask(manifest.pairs[s][1]) for s in manifest.ids(split)), manifest.num_classes)


# -- augmentation --------------------------------------------------------------

@dataclass
class AugmentPolicy:
    crop: Optional[Tuple[int, int]] = (256, 256)
    flip_prob: float = 0.5
    scale_range: Tuple[float, float] = (0.75, 1.25)
    rare_class_id: Optional[int] = None
    rare_factor: int = 1

    def __post_init__(self):
        self.scale_range = tuple(float(s) for s in self.scale_range)
        smin, smax = self.scale_range
        if not 0 < smin <= smax:
            raise ValueError(f"scale range must satisfy 0 < min <= max, got {self.scale_range}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must be in [0, 1]")
        if self.crop is not None:
            self.crop = tuple(int(c) for c in self.crop)
            if len(self.crop) != 2 or min(self.crop) < 1:
                raise ValueError("crop must be two positive extents")
        if self.rare_factor < 1:
            raise ValueError("rare_factor must be >= 1")

    @classmethod
    def identity(cls) -> "AugmentPolicy":
        return cls(crop=None, flip_prob=0.0, scale_range=(1.0, 1.0))

    @property
    def is_identity(self) -> bool:
        return self.crop is None and self.flip_prob == 0.0 and self.scale_range == (1.0, 1.0)


def resize_image(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = image.shape[1:]
    mh = bilinear_matrix(h, out_h).astype(image.dtype)
    mw = bilinear_matrix(w, out_w).astype(image.dtype)
    return np.matmul(np.matmul(mh, image), mw.T)


def nearest_indices(size: int, out: int) -> np.ndarray:
    return np.minimum(np.floor((np.arange(out) + 0.5) * size / out).astype(np.int64), size - 1)


def resize_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = mask.shape
    return mask[nearest_indices(h, out_h)[:, None], nearest_indices(w, out_w)[None, :]]


def hflip(sample: SegmentationSample) -> SegmentationSample:
    return SegmentationSample(sample.image[:, :, ::-1].copy(), sample.mask[:, ::-1].copy(), sample.id)


def augment(sample: SegmentationSample, policy: AugmentPolicy, rng: np.random.Generator) -> SegmentationSample:
    """Random scale, horizontal flip, then random crop (padding image 0 / mask 255 when short)."""
    image, mask = sample.image, sample.mask
    smin, smax = policy.scale_range
    u = rng.uniform(smin, smax) if smax > smin else smin
    h, w = mask.shape
    nh, nw = max(1, int(round(h * u))), max(1, int(round(w * u)))
    if (nh, nw) != (h, w):
        image, mask = resize_image(image, nh, nw), resize_mask(mask, nh, nw)
    if policy.flip_prob > 0 and rng.random() < policy.flip_prob:
        image, mask = image[:, :, ::-1], mask[:, ::-1]
    if policy.crop is not None:
        ch, cw = policy.crop
        ph, pw = max(ch, nh), max(cw, nw)
        if (ph, pw) != (nh, nw):
            padded_img = np.zeros((3, ph, pw), dtype=image.dtype)
            padded_img[:, :nh, :nw] = image
            padded_mask = np.full((ph, pw), IGNORE_INDEX, dtype=mask.dtype)
            padded_mask[:nh, :nw] = mask
            image, mask = padded_img, padded_mask
        top = int(rng.integers(0, ph - ch + 1))
        left = int(rng.integers(0, pw - cw + 1))
        image, mask = image[:, top : top + ch, left : left + cw], mask[top : top + ch, left : left + cw]
    return SegmentationSample(np.ascontiguousarray(image), np.ascontiguousarray(mask), sample.id)
