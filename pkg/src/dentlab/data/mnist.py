"""MNIST in the IDX format: big-endian headers followed by unsigned bytes."""

import logging
from pathlib import Path
from typing import Tuple

import numpy as np

from dentlab.data.dataset import Dataset, DatasetFormatException, PathLike, Split

logger = logging.getLogger("dentlab")

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
MNIST_CLASSES = 10


def _read_header(path: Path, payload: bytes, magic: int, dims: int) -> Tuple[int, ...]:
    header_size = 4 * (1 + dims)
    if len(payload) < header_size:
        raise DatasetFormatException(
            str(path), f"truncated header: {len(payload)} bytes, expected at least {header_size}"
        )
    header = np.frombuffer(payload, dtype=">u4", count=1 + dims)
    if int(header[0]) != magic:
        raise DatasetFormatException(
            str(path), f"found magic 0x{int(header[0]):08x}, expected 0x{magic:08x}"
        )
    shape = tuple(int(v) for v in header[1:])
    expected = header_size + int(np.prod(shape))
    if len(payload) != expected:
        raise DatasetFormatException(
            str(path), f"file has {len(payload)} bytes, header {shape} requires {expected}"
        )
    return shape


def read_idx_images(path: PathLike) -> np.ndarray:
    """Images of an IDX3 file as float32 (N, 1, H, W) scaled to [0, 1]."""
    source = Path(path)
    payload = source.read_bytes()
    count, rows, cols = _read_header(source, payload, IMAGES_MAGIC, 3)
    pixels = np.frombuffer(payload, dtype=np.uint8, offset=16)
    return pixels.reshape(count, 1, rows, cols).astype(np.float32) / np.float32(255.0)


def read_idx_labels(path: PathLike) -> np.ndarray:
    """Labels of an IDX1 file as int64 (N,)."""
    source = Path(path)
    payload = source.read_bytes()
    _read_header(source, payload, LABELS_MAGIC, 1)
    return np.frombuffer(payload, dtype=np.uint8, offset=8).astype(np.int64)


def load_mnist_idx(
    images_path: PathLike, labels_path: PathLike, split: Split = Split.TRAIN
) -> Dataset:
    """Load a pair of IDX files.

    Both files are parsed completely before the dataset is built, so a malformed file never
    yields a partial dataset.

    :param images_path: IDX3 image file.
    :param labels_path: IDX1 label file.
    :param split: Which split the files hold.
    :raises DatasetFormatException: On a wrong magic, a size mismatch or differing counts.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DatasetFormatException(
            str(labels_path), f"{labels.shape[0]} labels for {images.shape[0]} images"
        )
    if labels.size and labels.max() >= MNIST_CLASSES:
        raise DatasetFormatException(str(labels_path), f"label {labels.max()} is not a digit")
    logger.info("Loaded %s MNIST %s images from %s", images.shape[0], split.value, images_path)
    return Dataset(images, labels, split, "mnist", MNIST_CLASSES)


def write_idx(
    images: np.ndarray, labels: np.ndarray, images_path: PathLike, labels_path: PathLike
) -> None:
    """Write images in [0, 1] and labels as an IDX pair, e.g. for test fixtures."""
    count, _, rows, cols = images.shape
    pixels = np.rint(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(images_path).write_bytes(
        np.array([IMAGES_MAGIC, count, rows, cols], dtype=">u4").tobytes() + pixels.tobytes()
    )
    Path(labels_path).write_bytes(
        np.array([LABELS_MAGIC, count], dtype=">u4").tobytes()
        + labels.astype(np.uint8).tobytes()
    )
