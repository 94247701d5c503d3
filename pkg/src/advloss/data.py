"""IDX-format loading and imbalanced dataset construction.

The standard dataset is the 60000/10000 MNIST split read from the big-endian
IDX files. Two derived training sets probe mode collapse: the imbalanced one
augments every digit-0 image with its four 1-pixel shifts (5x as many zeros),
the very imbalanced one additionally adds the 2-pixel left/right shifts (7x).
Both keep the total size at 60000 by randomly subsampling the other digits
proportionally. No network access: callers supply file paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


class FormatError(ValueError):
    """Malformed IDX file."""


class DatasetVariant(Enum):
    STANDARD = "standard"
    IMBALANCED = "imbalanced"
    VERY_IMBALANCED = "very_imbalanced"


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray    # (n, 28, 28) float64 in [0, 1]
    labels: np.ndarray    # (n,) int64 in 0..9
    variant: DatasetVariant = DatasetVariant.STANDARD

    def __len__(self):
        return len(self.labels)

    def class_counts(self):
        return np.bincount(self.labels, minlength=10)


def _read_idx(path, expect_magic, expect_ndim):
    with open(path, "rb") as fh:
        blob = fh.read()
    header = 4 + 4 * expect_ndim
    if len(blob) < header:
        raise FormatError(f"{path}: truncated header")
    magic = int.from_bytes(blob[:4], "big")
    if magic != expect_magic:
        raise FormatError(f"{path}: bad magic {magic}, expected {expect_magic}")
    dims = tuple(int.from_bytes(blob[4 + 4 * i:8 + 4 * i], "big")
                 for i in range(expect_ndim))
    n = int(np.prod(dims))
    if len(blob) != header + n:
        raise FormatError(f"{path}: payload is {len(blob) - header} bytes, expected {n}")
    return np.frombuffer(blob, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path):
    """Parse an IDX image/label file pair into a Dataset (pixels scaled 1/255)."""
    raw = _read_idx(images_path, IMAGE_MAGIC, 3)
    labels = _read_idx(labels_path, LABEL_MAGIC, 1)
    if raw.shape[1:] != (28, 28):
        raise FormatError(f"{images_path}: images are {raw.shape[1:]}, expected (28, 28)")
    if raw.shape[0] != labels.shape[0]:
        raise FormatError(f"image count {raw.shape[0]} != label count {labels.shape[0]}")
    if labels.max(initial=0) > 9:
        raise FormatError("labels outside 0..9")
    return Dataset(images=raw.astype(np.float64) / 255.0,
                   labels=labels.astype(np.int64))


def save_idx(images, labels, images_path, labels_path):
    """Write a (n, 28, 28) float-in-[0,1] or uint8 stack as an IDX pair."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(IMAGE_MAGIC.to_bytes(4, "big"))
        for d in (n, rows, cols):
            fh.write(int(d).to_bytes(4, "big"))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(LABEL_MAGIC.to_bytes(4, "big"))
        fh.write(int(n).to_bytes(4, "big"))
        fh.write(labels.tobytes())


def shift_image(image, dx, dy):
    """Translate by (dx right, dy down) with zero fill; shape preserved."""
    if abs(dx) > 2 or abs(dy) > 2:
        raise ValueError("shifts beyond 2 pixels are not supported")
    return _shift_block(np.asarray(image)[None, ...], dx, dy)[0]


def _shift_block(block, dx, dy):
    out = np.zeros_like(block)
    h, w = block.shape[1:]
    src_r = slice(max(0, -dy), h - max(0, dy))
    dst_r = slice(max(0, dy), h - max(0, -dy))
    src_c = slice(max(0, -dx), w - max(0, dx))
    dst_c = slice(max(0, dx), w - max(0, -dx))
    out[:, dst_r, dst_c] = block[:, src_r, src_c]
    return out


# (dx, dy) offsets: top, bottom, left, right, then the 2-pixel left/right
# extension used for the 7x variant
_SHIFTS_1PX = ((0, -1), (0, 1), (-1, 0), (1, 0))
_SHIFTS_2PX = ((-2, 0), (2, 0))


def make_variant(standard, variant, seed=0):
    """Build an imbalanced training set from the standard one.

    Digit-0 images are multiplied via pixel shifts (5x or 7x); digits 1-9 are
    subsampled uniformly without replacement, proportionally per digit, so the
    total stays at the standard size.
    """
    variant = DatasetVariant(variant)
    if variant is DatasetVariant.STANDARD:
        return standard
    shifts = _SHIFTS_1PX if variant is DatasetVariant.IMBALANCED else _SHIFTS_1PX + _SHIFTS_2PX

    zeros = standard.images[standard.labels == 0]
    blocks = [zeros] + [_shift_block(zeros, dx, dy) for dx, dy in shifts]
    zero_images = np.concatenate(blocks, axis=0)

    total = len(standard)
    target_rest = total - len(zero_images)
    if target_rest < 0:
        raise ValueError("augmented zeros exceed the dataset size")
    counts = standard.class_counts()
    rest_counts = counts[1:]
    quota = _proportional_quota(rest_counts, target_rest)

    rng = np.random.default_rng(seed)
    picked = []
    for digit in range(1, 10):
        idx = np.flatnonzero(standard.labels == digit)
        take = rng.choice(idx, size=quota[digit - 1], replace=False)
        picked.append(np.sort(take))
    picked = np.concatenate(picked)

    images = np.concatenate([zero_images, standard.images[picked]], axis=0)
    labels = np.concatenate([np.zeros(len(zero_images), dtype=np.int64),
                             standard.labels[picked]])
    return Dataset(images=images, labels=labels, variant=variant)


def _proportional_quota(counts, target):
    # largest-remainder apportionment; ties broken toward lower digits
    counts = np.asarray(counts, dtype=np.float64)
    exact = counts * (target / counts.sum())
    base = np.floor(exact).astype(np.int64)
    short = target - int(base.sum())
    order = np.argsort(-(exact - base), kind="stable")
    base[order[:short]] += 1
    if np.any(base > counts.astype(np.int64)):
        raise ValueError("quota exceeds available samples")
    return base


def subsample(dataset, n, seed=0):
    """Seeded uniform subset without replacement (desk-scale training sets)."""
    if n >= len(dataset):
        return dataset
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(dataset), size=n, replace=False))
    return Dataset(images=dataset.images[idx], labels=dataset.labels[idx],
                   variant=dataset.variant)
