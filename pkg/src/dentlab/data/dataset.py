from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional, Tuple, Union

import numpy as np

from dentlab.internal.common.config import EnvDataConfig
from dentlab.internal.common.seeds import derive_rng

PathLike = Union[str, Path]


class DatasetFormatException(Exception):
    """Thrown when a dataset file does not follow its binary format."""

    def __init__(self, path: str, message: str):
        """Create the exception.

        :param path: The offending file.
        :param message: What is wrong, with found and expected values.
        """
        self.path = path
        super().__init__(f"{path}: {message}")


class Split(Enum):
    """Partition of a dataset."""

    TRAIN = "train"
    TEST = "test"


@dataclass
class Dataset:
    """Labeled images with pixel values in [0, 1]."""

    images: np.ndarray
    """float32 array of shape (N, C, H, W)."""
    labels: np.ndarray
    """int64 array of shape (N,)."""
    split: Split
    name: str
    num_classes: int

    def __post_init__(self) -> None:
        """Check shapes, pixel range and label range."""
        if self.images.ndim != 4:
            raise ValueError(
                f"Images of '{self.name}' must be (N, C, H, W), got {self.images.shape}"
            )
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(
                f"'{self.name}' has {self.images.shape[0]} images but labels of shape "
                f"{self.labels.shape}"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError(f"Pixels of '{self.name}' must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"Labels of '{self.name}' must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        """Number of samples."""
        return int(self.labels.shape[0])

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        """(C, H, W) of every image."""
        channels, height, width = self.images.shape[1:]
        return int(channels), int(height), int(width)

    def subset(self, count: int, seed: Optional[int] = None) -> "Dataset":
        """The first `count` samples, or `count` samples drawn without replacement given a seed."""
        count = min(count, len(self))
        if seed is None:
            index = np.arange(count)
        else:
            index = np.sort(derive_rng(seed, "subset", self.name).permutation(len(self))[:count])
        return self.take(index)

    def take(self, index: np.ndarray) -> "Dataset":
        """The samples at `index`, in that order."""
        return Dataset(
            images=self.images[index],
            labels=self.labels[index],
            split=self.split,
            name=self.name,
            num_classes=self.num_classes,
        )

    def batches(self, batch_size: int) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        """Consecutive (images, labels) batches; the last one may be smaller."""
        for start in range(0, len(self), batch_size):
            yield self.images[start : start + batch_size], self.labels[start : start + batch_size]


def resolve_data_path(path: PathLike, data_dir: Optional[str] = None) -> Path:
    """Resolve a relative dataset path against `data_dir` or $DENTLAB_DATA_DIR.

    :param path: Absolute path, or a path relative to the data root.
    :param data_dir: Explicit data root, taking precedence over the environment.
    """
    candidate = Path(path)
    if candidate.is_absolute() or candidate.exists():
        return candidate
    root = data_dir or EnvDataConfig().data_dir
    return Path(root) / candidate if root else candidate
