"""CIFAR-10 binary batches: records of one label byte and 3072 channel-planar pixel bytes."""

import logging
from pathlib import Path
from typing import List, Sequence

import numpy as np

from dentlab.data.dataset import Dataset, DatasetFormatException, PathLike, Split

logger = logging.getLogger("dentlab")

CIFAR_CLASSES = 10
IMAGE_SHAPE = (3, 32, 32)
RECORD_SIZE = 1 + 3 * 32 * 32


def _read_records(path: Path) -> np.ndarray:
    payload = path.read_bytes()
    if len(payload) == 0 or len(payload) % RECORD_SIZE:
        raise DatasetFormatException(
            str(path), f"size {len(payload)} is not a positive multiple of {RECORD_SIZE}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(-1, RECORD_SIZE)


def load_cifar10_binary(paths: Sequence[PathLike], split: Split = Split.TRAIN) -> Dataset:
    """Load and concatenate CIFAR-10 batch files.

    :param paths: One or more batch files, typically 10000 records each.
    :param split: Which split the files hold.
    :raises DatasetFormatException: If a file size is not a multiple of 3073 bytes or a label
        exceeds 9. No dataset is returned unless every file parses.
    """
    records: List[np.ndarray] = []
    for path in paths:
        chunk = _read_records(Path(path))
        if chunk[:, 0].max() >= CIFAR_CLASSES:
            raise DatasetFormatException(
                str(path), f"label {chunk[:, 0].max()} exceeds {CIFAR_CLASSES - 1}"
            )
        records.append(chunk)
    if not records:
        raise ValueError("load_cifar10_binary needs at least one file")
    table = np.concatenate(records)
    labels = table[:, 0].astype(np.int64)
    images = table[:, 1:].reshape((-1,) + IMAGE_SHAPE).astype(np.float32) / np.float32(255.0)
    logger.info("Loaded %s CIFAR-10 %s images from %s files", len(labels), split.value, len(paths))
    return Dataset(images, labels, split, "cifar10", CIFAR_CLASSES)


def write_cifar10_binary(dataset: Dataset, path: PathLike) -> None:
    """Write a dataset of 3x32x32 images as one CIFAR-10 batch file.

    Pixels are quantized to bytes, so images which are multiples of 1/255 survive a
    write/read round trip unchanged.
    """
    if dataset.image_shape != IMAGE_SHAPE:
        raise ValueError(f"CIFAR-10 records hold {IMAGE_SHAPE} images, got {dataset.image_shape}")
    pixels = np.rint(dataset.images * 255.0).astype(np.uint8).reshape(len(dataset), -1)
    table = np.concatenate([dataset.labels.astype(np.uint8).reshape(-1, 1), pixels], axis=1)
    Path(path).write_bytes(table.tobytes())
