"""Seed splitting.

Every random stream of a run (attack restarts, batch composition, defense init, dataset
rendering) is derived from the single run seed and a path of labels, e.g.
``("attack", batch_index, restart)``. Labels are hashed with CRC-32 so the derivation does not
depend on Python's per-process string hashing and worker processes derive identical streams.
"""

import zlib
from typing import Union

import numpy as np

SeedLabel = Union[str, int]


def _label_key(label: SeedLabel) -> int:
    if isinstance(label, int):
        if label < 0:
            raise ValueError(f"Seed labels must be nonnegative, got {label}")
        return label
    return zlib.crc32(label.encode("utf-8"))


def seed_sequence(run_seed: int, *path: SeedLabel) -> np.random.SeedSequence:
    """Seed sequence of the stream named by `path` under `run_seed`.

    :param run_seed: The run seed.
    :param path: Labels naming the stream.
    :return: Seed sequence which is unique per (run_seed, path).
    """
    return np.random.SeedSequence(entropy=run_seed, spawn_key=tuple(_label_key(p) for p in path))


def derive_rng(run_seed: int, *path: SeedLabel) -> np.random.Generator:
    """Random generator of the stream named by `path` under `run_seed`."""
    return np.random.default_rng(seed_sequence(run_seed, *path))


def derive_seed(run_seed: int, *path: SeedLabel) -> int:
    """Integer seed of the stream named by `path` under `run_seed`."""
    return int(seed_sequence(run_seed, *path).generate_state(1, dtype=np.uint32)[0])
