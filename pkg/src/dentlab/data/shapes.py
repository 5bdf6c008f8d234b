"""Procedurally rendered shapes, an easy 28x28 task that needs no downloads."""

from typing import Callable, Dict

import numpy as np

from dentlab.data.dataset import Dataset, Split
from dentlab.internal.common.seeds import derive_rng

IMAGE_SIZE = 28
NOISE_STD = 0.05

Mask = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


def _square(dy: np.ndarray, dx: np.ndarray, r: float) -> np.ndarray:
    return np.maximum(np.abs(dy), np.abs(dx)) <= r


def _disc(dy: np.ndarray, dx: np.ndarray, r: float) -> np.ndarray:
    return dy * dy + dx * dx <= r * r


def _triangle(dy: np.ndarray, dx: np.ndarray, r: float) -> np.ndarray:
    return (np.abs(dy) <= r) & (np.abs(dx) <= (dy + r) / 2)


def _cross(dy: np.ndarray, dx: np.ndarray, r: float) -> np.ndarray:
    return _horizontal_bar(dy, dx, r) | _vertical_bar(dy, dx, r)


def _horizontal_bar(dy: np.ndarray, dx: np.ndarray, r: float) -> np.ndarray:
    return (np.abs(dy) <= r / 3) & (np.abs(dx) <= r)


def _vertical_bar(dy: np.ndarray, dx: np.ndarray, r: float) -> np.ndarray:
    return (np.abs(dx) <= r / 3) & (np.abs(dy) <= r)


def _ring(dy: np.ndarray, dx: np.ndarray, r: float) -> np.ndarray:
    distance = np.sqrt(dy * dy + dx * dx)
    return (distance <= r) & (distance >= r / 2)


def _diagonal(dy: np.ndarray, dx: np.ndarray, r: float) -> np.ndarray:
    return (np.abs(dy - dx) <= r / 3) & _square(dy, dx, r)


TEMPLATES: Dict[str, Mask] = {
    "square": _square,
    "disc": _disc,
    "triangle": _triangle,
    "cross": _cross,
    "horizontal-bar": _horizontal_bar,
    "vertical-bar": _vertical_bar,
    "ring": _ring,
    "diagonal": _diagonal,
}
"""Shape masks in class order."""


def synth_shapes(n: int, classes: int, seed: int, split: Split = Split.TRAIN) -> Dataset:
    """Render n images of `classes` distinct shapes with random position, scale and noise.

    Labels are balanced: every class occurs floor(n / classes) or one more times.

    :param n: Number of images, at least `classes`.
    :param classes: Number of shape classes, 2 to 8.
    :param seed: Seed of the rendering.
    :param split: Split recorded on the dataset.
    :return: A (n, 1, 28, 28) dataset.
    """
    if classes > len(TEMPLATES):
        raise ValueError(f"synth_shapes has {len(TEMPLATES)} shape templates, {classes} requested")
    if classes < 2:
        raise ValueError(f"synth_shapes needs at least 2 classes, got {classes}")
    if n < classes:
        raise ValueError(f"synth_shapes needs n >= classes, got n={n} and classes={classes}")

    rng = derive_rng(seed, "synth-shapes", split.value)
    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)
    masks = list(TEMPLATES.values())
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(np.float64)
    images = np.empty((n, 1, IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
    for index, label in enumerate(labels):
        radius = rng.uniform(5.0, 9.0)
        low, high = radius + 1.0, IMAGE_SIZE - 2.0 - radius
        cy, cx = rng.uniform(low, high, size=2)
        intensity = rng.uniform(0.7, 1.0)
        canvas = masks[label](yy - cy, xx - cx, radius) * intensity
        canvas = canvas + rng.normal(0.0, NOISE_STD, size=canvas.shape)
        images[index, 0] = np.clip(canvas, 0.0, 1.0)
    return Dataset(images, labels, split, "synth-shapes", classes)
