"""Portable binary checkpoints.

Layout, all integers little-endian:

  magic         4 bytes  b"DNTL"
  major, minor  u16, u16 format version
  arch          u16 byte length, then UTF-8 architecture name
  num_classes   u32
  in_channels   u32
  image_size    u32
  count         u32 number of arrays
  count times:
    name        u16 byte length, then UTF-8 array name
    ndim        u8
    dims        ndim times u32
    data        prod(dims) f32 values in C order

Arrays follow `Model.named_arrays`: parameters in declaration order, then the running mean and
variance of every normalization layer.
"""

import logging
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from dentlab.nn.models import Model, UnknownArchitectureException, build_model

logger = logging.getLogger("dentlab")

MAGIC = b"DNTL"
FORMAT_MAJOR = 1
FORMAT_MINOR = 0


class CheckpointFormatException(Exception):
    """Thrown when a checkpoint file is malformed or written by a newer major version."""

    ...  # pragma: no cover


def _u16(value: int) -> bytes:
    return np.array([value], dtype="<u2").tobytes()


def _u32(values: List[int]) -> bytes:
    return np.array(values, dtype="<u4").tobytes()


def _text(value: str) -> bytes:
    encoded = value.encode("utf-8")
    return _u16(len(encoded)) + encoded


def encode_checkpoint(model: Model) -> bytes:
    """Serialize the architecture, parameters and running statistics of a model."""
    arrays = model.named_arrays()
    parts = [
        MAGIC,
        _u16(FORMAT_MAJOR),
        _u16(FORMAT_MINOR),
        _text(model.arch),
        _u32([model.num_classes, model.in_channels, model.image_size, len(arrays)]),
    ]
    for name, array in arrays:
        parts.append(_text(name))
        parts.append(np.array([array.ndim], dtype="u1").tobytes())
        parts.append(_u32(list(array.shape)))
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, payload: bytes, source: str):
        self.payload = payload
        self.offset = 0
        self.source = source

    def take(self, dtype: str, count: int, what: str) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        end = self.offset + itemsize * count
        if end > len(self.payload):
            raise CheckpointFormatException(
                f"{self.source}: truncated while reading {what} at byte {self.offset}, "
                f"need {end} bytes, file has {len(self.payload)}"
            )
        values = np.frombuffer(self.payload, dtype=dtype, count=count, offset=self.offset)
        self.offset = end
        return values

    def text(self, what: str) -> str:
        length = int(self.take("<u2", 1, f"{what} length")[0])
        raw = self.take("u1", length, what).tobytes()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatException(f"{self.source}: {what} is not UTF-8") from exc


def decode_checkpoint(payload: bytes, source: str = "<bytes>") -> Model:
    """Rebuild a model from checkpoint bytes.

    :param payload: The checkpoint contents.
    :param source: Name used in error messages.
    :raises CheckpointFormatException: On a wrong magic, a newer major version, truncation,
        trailing bytes or arrays which do not fit the architecture.
    :return: The model in eval mode.
    """
    reader = _Reader(payload, source)
    magic = reader.take("u1", len(MAGIC), "magic").tobytes()
    if magic != MAGIC:
        raise CheckpointFormatException(f"{source}: found magic {magic!r}, expected {MAGIC!r}")
    major, minor = (int(v) for v in reader.take("<u2", 2, "version"))
    if major > FORMAT_MAJOR:
        raise CheckpointFormatException(
            f"{source}: format version {major}.{minor} is newer than the supported "
            f"{FORMAT_MAJOR}.{FORMAT_MINOR}"
        )
    arch = reader.text("architecture")
    num_classes, in_channels, image_size, count = (
        int(v) for v in reader.take("<u4", 4, "header")
    )
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        name = reader.text("array name")
        ndim = int(reader.take("u1", 1, f"rank of '{name}'")[0])
        shape: Tuple[int, ...] = tuple(int(v) for v in reader.take("<u4", ndim, "dims"))
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = reader.take("<f4", size, f"data of '{name}'").reshape(shape).copy()
    if reader.offset != len(payload):
        raise CheckpointFormatException(
            f"{source}: {len(payload) - reader.offset} trailing bytes after {count} arrays"
        )

    try:
        model = build_model(
            arch, num_classes, seed=0, in_channels=in_channels, image_size=image_size
        )
        model.load_arrays(arrays)
    except (KeyError, ValueError, UnknownArchitectureException) as exc:
        raise CheckpointFormatException(f"{source}: {exc}") from exc
    return model


def save_checkpoint(model: Model, path: Union[str, Path]) -> None:
    """Write a checkpoint file, creating parent directories."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(encode_checkpoint(model))
    logger.info("Saved %s checkpoint to %s", model.arch, target)


def load_checkpoint(path: Union[str, Path]) -> Model:
    """Read a checkpoint file.

    :raises FileNotFoundError: If the file does not exist.
    :raises CheckpointFormatException: If the file is malformed.
    """
    source = Path(path)
    model = decode_checkpoint(source.read_bytes(), str(source))
    logger.debug("Loaded %s checkpoint from %s", model.arch, source)
    return model
