"""MNIST IDX reader/writer.

Layout (big endian)::

    images: i32 magic=2051 | i32 count | i32 rows | i32 cols | u8[count*rows*cols]
    labels: i32 magic=2049 | i32 count | u8[count]

Files ending in ``.gz`` are transparently (de)compressed.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
IMAGE_SIDE = 28
NUM_CLASSES = 10
CANONICAL_COUNTS = {"train": 60000, "test": 10000}


class IdxFormatError(ValueError):
    """Base class for malformed IDX payloads."""


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxTrailingBytesError(IdxFormatError):
    pass


class IdxDimensionError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


class LabelRangeError(IdxFormatError):
    pass


@dataclass(frozen=True)
class MnistSet:
    images: np.ndarray  # (n, 28, 28) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64 in [0, 10)
    split: str

    def __post_init__(self):
        if self.split not in CANONICAL_COUNTS:
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise IdxCountMismatchError("image and label counts differ")

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self), -1)

    def of_class(self, label: int) -> np.ndarray:
        return self.flat[self.labels == label]


def _read_bytes(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def _write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    if path.suffix == ".gz":
        # mtime=0 keeps the archive byte-stable
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


def parse_idx_images(buf: bytes) -> np.ndarray:
    if len(buf) < 16:
        raise IdxTruncatedError(f"image header needs 16 bytes, got {len(buf)}")
    magic, count, rows, cols = struct.unpack(">iiii", buf[:16])
    if magic != IMAGE_MAGIC:
        raise IdxMagicError(f"bad image magic {magic} (expected {IMAGE_MAGIC})")
    if rows != IMAGE_SIDE or cols != IMAGE_SIDE:
        raise IdxDimensionError(f"expected {IMAGE_SIDE}x{IMAGE_SIDE} images, got {rows}x{cols}")
    if count < 0:
        raise IdxCountMismatchError(f"negative image count {count}")
    expected = count * rows * cols
    payload = len(buf) - 16
    if payload < expected:
        raise IdxTruncatedError(f"truncated image payload: {payload} of {expected} bytes")
    if payload > expected:
        raise IdxTrailingBytesError(f"{payload - expected} trailing bytes after image payload")
    return np.frombuffer(buf, dtype=np.uint8, offset=16).reshape(count, rows, cols)


def parse_idx_labels(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        raise IdxTruncatedError(f"label header needs 8 bytes, got {len(buf)}")
    magic, count = struct.unpack(">ii", buf[:8])
    if magic != LABEL_MAGIC:
        raise IdxMagicError(f"bad label magic {magic} (expected {LABEL_MAGIC})")
    if count < 0:
        raise IdxCountMismatchError(f"negative label count {count}")
    payload = len(buf) - 8
    if payload < count:
        raise IdxTruncatedError(f"truncated label payload: {payload} of {count} bytes")
    if payload > count:
        raise IdxTrailingBytesError(f"{payload - count} trailing bytes after label payload")
    labels = np.frombuffer(buf, dtype=np.uint8, offset=8)
    bad = np.flatnonzero(labels >= NUM_CLASSES)
    if bad.size:
        raise LabelRangeError(f"label out of range: {int(labels[bad[0]])} at index {int(bad[0])}")
    return labels


def load_mnist_idx(images_path, labels_path, split: str = "test", *, strict_counts: bool = False) -> MnistSet:
    """Load an IDX image/label pair; pixels are scaled to [0, 1].

    With ``strict_counts`` the item count must equal the canonical MNIST size
    for ``split`` (60000 train / 10000 test).
    """
    images = parse_idx_images(_read_bytes(images_path))
    labels = parse_idx_labels(_read_bytes(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if strict_counts and images.shape[0] != CANONICAL_COUNTS[split]:
        raise IdxCountMismatchError(
            f"{split} split should hold {CANONICAL_COUNTS[split]} items, found {images.shape[0]}"
        )
    return MnistSet(images.astype(np.float64) / 255.0, labels.astype(np.int64), split)


def encode_idx_images(images: np.ndarray) -> bytes:
    images = np.asarray(images)
    if images.dtype != np.uint8:
        raise TypeError("IDX images must be uint8")
    n, rows, cols = images.shape
    return struct.pack(">iiii", IMAGE_MAGIC, n, rows, cols) + np.ascontiguousarray(images).tobytes()


def encode_idx_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">ii", LABEL_MAGIC, labels.shape[0]) + labels.tobytes()


def write_idx_images(path, images: np.ndarray) -> None:
    _write_bytes(path, encode_idx_images(images))


def write_idx_labels(path, labels: np.ndarray) -> None:
    _write_bytes(path, encode_idx_labels(labels))


def synthetic_idx_fixture(directory, n: int = 32, seed: int = 0) -> tuple[Path, Path]:
    """Write a tiny random IDX pair for tests; returns (images_path, labels_path)."""
    rng = np.random.default_rng(seed)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    images = rng.integers(0, 256, size=(n, IMAGE_SIDE, IMAGE_SIDE), dtype=np.uint8)
    labels = rng.integers(0, NUM_CLASSES, size=n, dtype=np.uint8)
    ipath, lpath = directory / "images-idx3-ubyte", directory / "labels-idx1-ubyte"
    write_idx_images(ipath, images)
    write_idx_labels(lpath, labels)
    return ipath, lpath
