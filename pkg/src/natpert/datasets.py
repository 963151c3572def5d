"""Dataset ingestion: CIFAR-10 binary batches, synthetic shapes, raw tensor dirs."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)


@dataclass
class LabeledImageBatch:
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        yield self.images
        yield self.labels

    def subset(self, idx) -> "LabeledImageBatch":
        return LabeledImageBatch(self.images[idx], self.labels[idx])


@dataclass
class DatasetSplits:
    train: LabeledImageBatch
    val: LabeledImageBatch
    test: LabeledImageBatch
    num_classes: int
    name: str = ""

    @property
    def image_shape(self) -> tuple:
        return tuple(self.train.images.shape[1:])


# ---------------------------------------------------------------------------
# CIFAR-10


def read_cifar10_records(path) -> tuple:
    """Parse one CIFAR-10 binary file into uint8 images and labels."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD:
        raise ValueError(f"{path}: size {raw.size} is not a multiple of {CIFAR_RECORD}")
    rec = raw.reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        raise ValueError(f"{path}: label byte {labels.max()} > 9")
    return rec[:, 1:].reshape(-1, *CIFAR_SHAPE), labels


def to_unit(images_u8: np.ndarray) -> np.ndarray:
    return images_u8.astype(np.float32) / np.float32(255.0)


def stratified_indices(labels, counts, rng) -> list:
    """Disjoint class-balanced index sets, one per entry of ``counts``.

    Each set has its classes equal to within one; leftover slots go to the
    classes in ascending order.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    pools = {c: list(rng.permutation(np.flatnonzero(labels == c))) for c in classes}
    out = []
    for n in counts:
        per = np.full(len(classes), n // len(classes))
        per[: n % len(classes)] += 1
        chosen = []
        for c, k in zip(classes, per):
            if k > len(pools[c]):
                raise ValueError(f"not enough records of class {c} for a split of {n}")
            chosen.extend(pools[c][:k])
            pools[c] = pools[c][k:]
        out.append(np.sort(np.asarray(chosen, dtype=np.int64)))
    return out


def _cifar_files(path):
    if os.path.isfile(path):
        return [path], []
    train = sorted(os.path.join(path, f) for f in os.listdir(path)
                   if f.startswith("data_batch") and f.endswith(".bin"))
    test = [os.path.join(path, "test_batch.bin")]
    test = [f for f in test if os.path.exists(f)]
    if not train and not test:
        raise FileNotFoundError(f"no CIFAR-10 binary batches under {path}")
    return train, test


def load_cifar10(path, n_train: int = 5000, n_val: int = 1000, n_test: int = 2000,
                 seed: int = 0) -> DatasetSplits:
    """Stratified desk-scale subsets of CIFAR-10 (binary version).

    Train and validation come from the training batches, test from
    ``test_batch.bin``; a single file is split three ways instead.
    """
    rng = np.random.default_rng(seed)
    train_files, test_files = _cifar_files(path)

    def read(files):
        parts = [read_cifar10_records(f) for f in files]
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    if train_files and test_files:
        xtr, ytr = read(train_files)
        xte, yte = read(test_files)
        tr, va = stratified_indices(ytr, [n_train, n_val], rng)
        (te,) = stratified_indices(yte, [n_test], rng)
    else:
        xtr, ytr = read(train_files or test_files)
        xte, yte = xtr, ytr
        tr, va, te = stratified_indices(ytr, [n_train, n_val, n_test], rng)
    return DatasetSplits(
        LabeledImageBatch(to_unit(xtr[tr]), ytr[tr]),
        LabeledImageBatch(to_unit(xtr[va]), ytr[va]),
        LabeledImageBatch(to_unit(xte[te]), yte[te]),
        10, "cifar10")


# ---------------------------------------------------------------------------
# synthetic shapes

SHAPE_CLASSES = ("disk", "square", "cross")
_CLASS_COLORS = np.array([[0.9, 0.2, 0.2], [0.2, 0.8, 0.2], [0.2, 0.3, 0.9]])


def _shape_mask(cls: int, h: int, w: int, cy: float, cx: float, size: float) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    dy, dx = yy - cy, xx - cx
    if cls == 0:
        return dy ** 2 + dx ** 2 <= size ** 2
    if cls == 1:
        half = size * 0.85
        return (np.abs(dy) <= half) & (np.abs(dx) <= half)
    arm = max(size / 3.0, 1.5)
    return (((np.abs(dy) <= arm) & (np.abs(dx) <= size))
            | ((np.abs(dx) <= arm) & (np.abs(dy) <= size)))


def synthetic_shapes(n: int, seed: int, variant: str = "standard", num_classes: int = 3,
                     size: int = 32, color_cue: float = 0.5, color_bias: float = 0.2,
                     scale_range: tuple = (0.25, 0.42),
                     cue_scale_range: tuple = (0.10, 0.16)) -> LabeledImageBatch:
    """Disks, squares and crosses on a noisy background.

    ``variant="standard"`` mixes two kinds of image so that a classifier has
    to use both colour and shape. A fraction ``color_cue`` shows a small shape
    (``cue_scale_range``) in its pure class colour; the rest show a large shape
    (``scale_range``) whose colour only leans towards the class hue by
    ``color_bias``. Position and background are random throughout.
    ``variant="easy"`` centres a fixed-size shape in its pure class colour on
    black, which makes the classes linearly separable.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 1 <= num_classes <= 3:
        raise ValueError("synthetic shapes support 1 to 3 classes")
    if variant not in ("standard", "easy"):
        raise ValueError(f"unknown variant {variant!r}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % num_classes).astype(np.int64)
    images = np.zeros((n, 3, size, size), dtype=np.float32)
    luma = np.array([0.299, 0.587, 0.114])
    for i, cls in enumerate(labels):
        if variant == "easy":
            mask = _shape_mask(cls, size, size, size / 2, size / 2, size * 0.3)
            images[i][:, mask] = _CLASS_COLORS[cls][:, None]
            continue
        if rng.uniform() < color_cue:
            color = np.clip(_CLASS_COLORS[cls] + rng.uniform(-0.05, 0.05, 3), 0, 1)
            scale = rng.uniform(*cue_scale_range) * size
        else:
            color = np.clip(color_bias * _CLASS_COLORS[cls]
                            + (1 - color_bias) * rng.uniform(0, 1, 3), 0, 1)
            scale = rng.uniform(*scale_range) * size
        lum = float(luma @ color)
        gap = rng.uniform(0.25, 0.45)
        bg_level = lum - gap if lum - gap >= 0.05 else lum + gap
        bg = np.clip(bg_level + rng.uniform(-0.08, 0.08, 3), 0, 1)
        img = bg[:, None, None] + rng.uniform(-0.1, 0.1, (3, size, size))
        cy, cx = rng.uniform(scale + 1, size - scale - 1, 2)
        mask = _shape_mask(cls, size, size, cy, cx, scale)
        img[:, mask] = color[:, None] + rng.uniform(-0.05, 0.05, (3, int(mask.sum())))
        images[i] = np.clip(img, 0, 1)
    return LabeledImageBatch(images, labels)


def synthetic_splits(n_train: int, n_val: int, n_test: int, seed: int = 0,
                     variant: str = "standard", num_classes: int = 3) -> DatasetSplits:
    ss = np.random.SeedSequence(seed).generate_state(3)
    return DatasetSplits(
        synthetic_shapes(n_train, int(ss[0]), variant, num_classes),
        synthetic_shapes(n_val, int(ss[1]), variant, num_classes),
        synthetic_shapes(n_test, int(ss[2]), variant, num_classes),
        num_classes, f"synthetic_{variant}")


# ---------------------------------------------------------------------------


@dataclass
class DatasetSource:
    kind: str = "synthetic_shapes"  # cifar10_binary | synthetic_shapes | raw_tensor_dir
    path: str = ""
    n_train: int = 1200
    n_val: int = 600
    n_test: int = 600
    seed: int = 0

    def load(self) -> DatasetSplits:
        if self.kind == "synthetic_shapes":
            return synthetic_splits(self.n_train, self.n_val, self.n_test, self.seed)
        if self.kind == "cifar10_binary":
            return load_cifar10(self.path, self.n_train, self.n_val, self.n_test, self.seed)
        if self.kind == "raw_tensor_dir":
            return load_raw_tensor_dir(self.path, self.n_train, self.n_val, self.n_test, self.seed)
        raise ValueError(f"unknown dataset kind {self.kind!r}")


def load_raw_tensor_dir(path, n_train, n_val, n_test, seed=0) -> DatasetSplits:
    """``images.npt`` (float32 N,C,H,W) plus ``labels.npt`` split three ways."""
    from .storage import read_tensor

    images = read_tensor(os.path.join(path, "images.npt")).astype(np.float32)
    labels = read_tensor(os.path.join(path, "labels.npt")).astype(np.int64)
    if len(images) != len(labels):
        raise ValueError("images and labels disagree in length")
    if n_train + n_val + n_test > len(labels):
        raise ValueError("split sizes exceed the available records")
    rng = np.random.default_rng(seed)
    tr, va, te = stratified_indices(labels, [n_train, n_val, n_test], rng)
    full = LabeledImageBatch(images, labels)
    return DatasetSplits(full.subset(tr), full.subset(va), full.subset(te),
                         int(labels.max()) + 1, os.path.basename(os.path.normpath(path)))
