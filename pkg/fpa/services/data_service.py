"""
Data Service - Dataset loading, normalization, flips and batching

Datasets are immutable: every function returns a new Dataset or a fresh array.
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from adapters.idx_adapter import IdxAdapter
from exceptions import ConfigError, DataError, ZeroVarianceError
from models import (
    Batch,
    Dataset,
    IdxManifest,
    Normalization,
    NormalizationMode,
    Split,
)
from pydantic import ValidationError

logger = logging.getLogger(__name__)

SeedLike = Union[int, Sequence[int], np.random.SeedSequence]

SYNTHETIC_SIZE = 28
SYNTHETIC_CLASSES = 10
SYNTHETIC_NOISE = 0.1
UNIT_RANGE = Normalization(mode=NormalizationMode.RANGE, raw_max=1.0)


# =============================================================================
# Synthetic data
# =============================================================================


def _disk(center_row: float, center_col: float, radius: float) -> np.ndarray:
    rows, cols = np.mgrid[0:SYNTHETIC_SIZE, 0:SYNTHETIC_SIZE]
    return (rows - center_row) ** 2 + (cols - center_col) ** 2 <= radius**2


def class_templates() -> np.ndarray:
    """
    10 x 28 x 28 boolean templates, each mirror-symmetric about the vertical axis
    so horizontal flips never change the class evidence.
    """
    n = SYNTHETIC_SIZE
    t = np.zeros((SYNTHETIC_CLASSES, n, n), dtype=bool)
    t[0, 4:7, 6:22] = True  # top bar
    t[1, 21:24, 6:22] = True  # bottom bar
    t[2, 6:22, 5:8] = True  # two side bars
    t[2, 6:22, 20:23] = True
    t[3, 4:24, 12:16] = True  # central vertical bar
    t[4, 12:16, 4:24] = True  # cross
    t[4, 4:24, 12:16] = True
    t[5] = _disk(13.5, 13.5, 5.0)  # central blob
    t[6] = _disk(7.0, 6.5, 3.0) | _disk(7.0, 20.5, 3.0)  # top blobs
    t[7] = _disk(20.0, 6.5, 3.0) | _disk(20.0, 20.5, 3.0)  # bottom blobs
    t[8, 6:22, 6:22] = True  # ring
    t[8, 9:19, 9:19] = False
    rows, cols = np.mgrid[0:n, 0:n]
    diagonals = (np.abs(rows - cols) <= 1) | (np.abs(rows - (n - 1 - cols)) <= 1)
    t[9] = diagonals & (rows >= 5) & (rows <= 22)  # X
    return t


def gen_synthetic(num_samples: int, seed: int, split: Split = Split.TRAIN) -> Dataset:
    """
    Raw [0, 1] images: a class template at intensity U(0.6, 1.0), shifted by up to
    one pixel, plus uniform noise in [-0.1, 0.1], clipped.

    Labels are exactly balanced (arange % 10, permuted).
    """
    if num_samples < 1:
        raise ValueError(f"num_samples must be >= 1, got {num_samples}")
    split = Split(split)
    rng = np.random.default_rng([seed, 0 if split == Split.TRAIN else 1])
    templates = class_templates().astype(np.float64)

    labels = rng.permutation(np.arange(num_samples) % SYNTHETIC_CLASSES)
    intensity = rng.uniform(0.6, 1.0, size=num_samples)
    shifts = rng.integers(-1, 2, size=(num_samples, 2))
    noise = rng.uniform(-SYNTHETIC_NOISE, SYNTHETIC_NOISE, size=(num_samples, SYNTHETIC_SIZE, SYNTHETIC_SIZE))

    images = np.empty((num_samples, SYNTHETIC_SIZE, SYNTHETIC_SIZE, 1), dtype=np.float32)
    for i in range(num_samples):
        base = np.roll(templates[labels[i]], tuple(shifts[i]), axis=(0, 1))
        images[i, :, :, 0] = np.clip(intensity[i] * base + noise[i], 0.0, 1.0)

    return Dataset(
        split=split,
        images=images,
        labels=labels,
        ids=np.arange(num_samples),
        num_classes=SYNTHETIC_CLASSES,
        raw_normalization=UNIT_RANGE,
        class_names=[f"template-{k}" for k in range(SYNTHETIC_CLASSES)],
    )


# =============================================================================
# IDX files
# =============================================================================


def load_idx(
    images_path,
    labels_path,
    split: Split = Split.TRAIN,
    num_classes: Optional[int] = None,
    class_names: Optional[List[str]] = None,
) -> Dataset:
    """
    Parse an IDX image/label pair into a raw [0, 255] dataset.

    Raises:
        BadMagicError, TruncatedFileError, CountMismatchError
    """
    images, labels = IdxAdapter.read_pair(images_path, labels_path)
    if num_classes is None:
        num_classes = len(class_names) if class_names else int(labels.max(initial=-1)) + 1
    if labels.size and labels.max() >= num_classes:
        raise DataError(f"{labels_path}: label {int(labels.max())} >= {num_classes} classes")
    return Dataset(
        split=Split(split),
        images=images,
        labels=labels,
        ids=np.arange(images.shape[0]),
        num_classes=num_classes,
        raw_normalization=Normalization(mode=NormalizationMode.RANGE, raw_max=255.0),
        class_names=class_names,
    )


def write_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write raw pixels as uint8 IDX (values rescaled to [0, 255])."""
    raw = denormalize(dataset) if dataset.is_normalized else dataset
    pixels = raw.images.astype(np.float64) * (255.0 / raw.raw_normalization.raw_max)
    IdxAdapter.write_images(images_path, np.clip(np.rint(pixels), 0, 255).astype(np.uint8))
    IdxAdapter.write_labels(labels_path, raw.labels)


def load_manifest(path) -> Tuple[IdxManifest, Path]:
    path = Path(path)
    try:
        manifest = IdxManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read manifest {path}: {e}") from e
    except ValidationError as e:
        raise ConfigError(f"{path}: invalid manifest\n{e}") from e
    return manifest, path.parent


# =============================================================================
# Normalization
# =============================================================================


def normalize(
    dataset: Dataset,
    mode: NormalizationMode = NormalizationMode.RANGE,
    reference: Optional[Normalization] = None,
) -> Dataset:
    """
    Map raw pixels to model inputs.

    range:  x' = 2 x / raw_max - 1
    zscore: per-channel (x - mean) / std, statistics from this dataset unless a
            `reference` (the training split's normalization) is given

    Raises:
        ZeroVarianceError: a channel is constant in z-score mode
    """
    if dataset.is_normalized:
        raise DataError("dataset is already normalized")

    if reference is None:
        mode = NormalizationMode(mode)
        raw_max = dataset.raw_normalization.raw_max
        if mode == NormalizationMode.ZSCORE:
            pixels = dataset.images.astype(np.float64)
            mean = pixels.mean(axis=(0, 1, 2))
            std = pixels.std(axis=(0, 1, 2))
            if np.any(std == 0):
                raise ZeroVarianceError(
                    f"channel(s) {np.flatnonzero(std == 0).tolist()} have zero std"
                )
            reference = Normalization(
                mode=mode, raw_max=raw_max, mean=mean.tolist(), std=std.tolist()
            )
        else:
            reference = Normalization(mode=mode, raw_max=raw_max)

    normalized = reference.apply(dataset.images).astype(np.float32)
    return dataset.evolve(images=normalized, normalization=reference)


def denormalize(dataset: Dataset) -> Dataset:
    if not dataset.is_normalized:
        return dataset
    raw = dataset.normalization.invert(dataset.images).astype(np.float32)
    return dataset.evolve(images=raw, normalization=None)


# =============================================================================
# Flips, batching, subsets
# =============================================================================


def horizontal_flip(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Reverse the width axis of an H x W x C image with probability 0.5."""
    if rng.random() < 0.5:
        return image[:, ::-1].copy()
    return np.array(image, copy=True)


def flip_batch(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Per-sample 0.5 flip of a K x H x W x C batch, on a copy."""
    flipped = np.array(images, copy=True)
    chosen = rng.random(images.shape[0]) < 0.5
    flipped[chosen] = flipped[chosen][:, :, ::-1]
    return flipped


def batch_iter(dataset: Dataset, batch_size: int, epoch_seed: SeedLike) -> List[Batch]:
    """Seeded shuffle; every sample once per epoch, last partial batch kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(epoch_seed).permutation(len(dataset))
    batches = []
    for start in range(0, len(order), batch_size):
        chosen = order[start : start + batch_size]
        batches.append(
            Batch(
                images=dataset.images[chosen],
                labels=dataset.labels[chosen],
                ids=dataset.ids[chosen],
            )
        )
    return batches


def subset(dataset: Dataset, ids: Sequence[int]) -> Dataset:
    """Samples with the given ids, in the given order."""
    positions = {int(sample_id): i for i, sample_id in enumerate(dataset.ids)}
    try:
        chosen = np.array([positions[int(i)] for i in ids], dtype=np.int64)
    except KeyError as e:
        raise DataError(f"sample id {e.args[0]} not in the {dataset.split.value} split") from e
    return dataset.evolve(
        images=dataset.images[chosen], labels=dataset.labels[chosen], ids=dataset.ids[chosen]
    )


def split_validation(dataset: Dataset, val_samples: int) -> Tuple[Dataset, Dataset]:
    """Hold out the last `val_samples` samples."""
    if val_samples >= len(dataset):
        raise ConfigError(
            f"val_samples={val_samples} leaves no training data ({len(dataset)} samples)"
        )
    keep = len(dataset) - val_samples
    return subset(dataset, dataset.ids[:keep]), subset(dataset, dataset.ids[keep:])


def load_dataset(section) -> Tuple[Dataset, Dataset, Dataset]:
    """
    Build the normalized (train, val, test) splits described by a DatasetSection.

    Normalization statistics come from the training portion only.
    """
    mode = section.normalization
    if section.source == "synthetic":
        train_raw = gen_synthetic(section.num_train, section.seed, Split.TRAIN)
        test_raw = gen_synthetic(section.num_test, section.seed, Split.TEST)
    else:
        manifest, root = load_manifest(section.manifest)
        mode = manifest.normalization or mode
        num_classes = len(manifest.class_names) if manifest.class_names else None
        train_raw = load_idx(
            root / manifest.train_images,
            root / manifest.train_labels,
            Split.TRAIN,
            num_classes,
            manifest.class_names,
        )
        test_raw = load_idx(
            root / manifest.test_images,
            root / manifest.test_labels,
            Split.TEST,
            max(train_raw.num_classes, num_classes or 0),
            manifest.class_names,
        )
        if train_raw.image_shape != test_raw.image_shape:
            raise DataError(
                f"train images {train_raw.image_shape} and test images "
                f"{test_raw.image_shape} differ in shape"
            )
        if test_raw.num_classes > train_raw.num_classes:
            train_raw = train_raw.evolve(num_classes=test_raw.num_classes)

    if section.val_samples:
        train_raw, val_raw = split_validation(train_raw, section.val_samples)
    else:
        val_raw = None

    train = normalize(train_raw, mode)
    test = normalize(test_raw, reference=train.normalization)
    val = normalize(val_raw, reference=train.normalization) if val_raw is not None else None
    logger.info(
        f"✓ Loaded {section.source} data: train={len(train)} "
        f"val={len(val) if val is not None else 0} test={len(test)} "
        f"shape={train.image_shape} normalization={train.normalization.mode.value}"
    )
    return train, val, test
