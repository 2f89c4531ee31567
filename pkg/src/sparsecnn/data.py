"""Datasets: synthetic templates, IDX and CSV readers, batching."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CountMismatchError, DataFormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # [count, maps, h, w] float32 in [0, 1]
    labels: np.ndarray  # [count] int64
    class_count: int
    split: str = "train"

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DataFormatError(f"images must be [count, maps, h, w], got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise CountMismatchError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.class_count < 1:
            raise DataFormatError("class_count must be positive")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataFormatError(f"labels outside [0, {self.class_count})")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise DataFormatError("pixel values must lie in [0, 1]")

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def subset(self, index, split=None) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.images[index], self.labels[index], self.class_count, split or self.split)


def _templates(classes, h, w):
    """One bar per class at angle ``pi * c / classes``; odd classes add a centre blob."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    dy, dx = yy - cy, xx - cx
    radius = min(h, w) / 2.0
    out = np.empty((classes, h, w))
    for c in range(classes):
        theta = np.pi * c / classes
        # distance from the line through the centre at angle theta
        dist = np.abs(-np.sin(theta) * dx + np.cos(theta) * dy)
        along = np.abs(np.cos(theta) * dx + np.sin(theta) * dy)
        bar = np.exp(-0.5 * (dist / 1.0) ** 2) * (along <= 0.8 * radius)
        if c % 2:
            r = 0.25 * radius * (1 + (c // 2) % 3)
            bar = np.maximum(bar, np.exp(-0.5 * ((dx ** 2 + dy ** 2) / r ** 2)) * 0.8)
        out[c] = bar
    return out


def synth_templates(h: int, w: int, classes: int) -> np.ndarray:
    return _templates(classes, h, w).astype(np.float32)


def synth_generate(seed: int, count: int, h: int, w: int, classes: int, noise_sd: float,
                   split: str = "train") -> Dataset:
    """Class templates plus Gaussian pixel noise, clipped to ``[0, 1]``."""
    if classes < 2:
        raise ValueError("classes must be >= 2")
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    rng = np.random.default_rng(seed)
    templates = _templates(classes, h, w)
    labels = rng.integers(0, classes, size=count)
    images = templates[labels]
    if noise_sd > 0:
        images = images + rng.normal(0.0, noise_sd, size=images.shape)
    images = np.clip(images, 0.0, 1.0).astype(np.float32)[:, None, :, :]
    return Dataset(images, labels.astype(np.int64), classes, split)


def load_idx(images_path, labels_path, class_count=None, split="train") -> Dataset:
    """Read a big-endian IDX image/label pair; pixels become ``byte / 255``."""
    with open(images_path, "rb") as fh:
        img_blob = fh.read()
    with open(labels_path, "rb") as fh:
        lbl_blob = fh.read()
    if len(img_blob) < 16:
        raise DataFormatError(f"{images_path}: file too short for an IDX image header")
    magic, count, rows, cols = struct.unpack(">IIII", img_blob[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    if len(img_blob) - 16 != count * rows * cols:
        raise DataFormatError(
            f"{images_path}: dimension mismatch, header says {count}x{rows}x{cols} but payload has {len(img_blob) - 16} bytes")
    if len(lbl_blob) < 8:
        raise DataFormatError(f"{labels_path}: file too short for an IDX label header")
    lmagic, lcount = struct.unpack(">II", lbl_blob[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"{labels_path}: bad magic 0x{lmagic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(lbl_blob) - 8 != lcount:
        raise DataFormatError(f"{labels_path}: dimension mismatch, header says {lcount} labels, payload has {len(lbl_blob) - 8}")
    if lcount != count:
        raise CountMismatchError(f"{count} images but {lcount} labels")
    pixels = np.frombuffer(img_blob, dtype=np.uint8, offset=16).reshape(count, 1, rows, cols)
    labels = np.frombuffer(lbl_blob, dtype=np.uint8, offset=8).astype(np.int64)
    if class_count is None:
        class_count = int(labels.max()) + 1 if count else 1
    return Dataset((pixels.astype(np.float32) / np.float32(255)), labels, class_count, split)


def write_idx(ds: Dataset, images_path, labels_path) -> None:
    """Write a single-map dataset as an IDX pair, rounding pixels to bytes."""
    if ds.images.shape[1] != 1:
        raise DataFormatError("IDX image files hold single-map images only")
    count, _, rows, cols = ds.images.shape
    pixels = np.rint(ds.images[:, 0] * 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, count))
        fh.write(ds.labels.astype(np.uint8).tobytes())


def load_csv(path, sample_shape, class_count=None, split="train") -> Dataset:
    """Rows of ``label, pixel...`` with ``maps * h * w`` pixel floats."""
    sample_shape = tuple(int(s) for s in sample_shape)
    if len(sample_shape) == 2:
        sample_shape = (1,) + sample_shape
    size = int(np.prod(sample_shape))
    labels, rows = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if len(row) != size + 1:
                raise DataFormatError(f"{path}:{lineno}: expected {size + 1} fields, got {len(row)}")
            try:
                labels.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    images = np.asarray(rows, dtype=np.float32).reshape((len(rows),) + sample_shape)
    labels = np.asarray(labels, dtype=np.int64)
    if class_count is None:
        class_count = int(labels.max()) + 1 if len(labels) else 1
    return Dataset(images, labels, class_count, split)


def write_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for img, label in zip(ds.images, ds.labels):
            writer.writerow([int(label)] + [repr(float(v)) for v in img.ravel()])


def split(ds: Dataset, test_fraction: float, seed: int) -> tuple:
    """Random ``(train, test)`` partition."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(ds))
    n_test = int(round(test_fraction * len(ds)))
    return ds.subset(np.sort(order[n_test:]), "train"), ds.subset(np.sort(order[:n_test]), "test")


def epoch_order(count: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([int(seed), int(epoch)]).permutation(count)


def batch_iter(ds: Dataset, batch_size: int, seed: int, epoch: int):
    """Yield ``(images, labels)`` over one shuffled epoch; the last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(ds) == 0:
        raise DataFormatError("cannot iterate over an empty dataset")
    order = epoch_order(len(ds), seed, epoch)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield ds.images[idx], ds.labels[idx]
