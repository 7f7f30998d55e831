"""MNIST-style IDX ingestion.

IDX files use big-endian headers: magic 0x00000803 for image files (count,
rows, cols follow) and 0x00000801 for label files (count follows), then raw
uint8 data. Pixels are scaled by 1/255 and normalized with the constants the
model container carries, so the engine itself has no dataset assumptions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .model import Normalization

__all__ = [
    "IdxFormatError",
    "Dataset",
    "load_idx_images",
    "load_idx_labels",
    "save_idx_images",
    "save_idx_labels",
    "load_mnist_idx",
]

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """An IDX file header or payload is malformed."""


@dataclass(frozen=True)
class Dataset:
    """Normalized images [N,1,H,W] (float32) with integer labels [N]."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise IdxFormatError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "Dataset":
        return Dataset(images=self.images[indices], labels=self.labels[indices])


def load_idx_images(data: bytes) -> np.ndarray:
    """Decode an IDX image file into a uint8 array [N,H,W]."""
    if len(data) < 16:
        raise IdxFormatError(f"image file has only {len(data)} bytes of header")
    magic, count, rows, cols = struct.unpack(">iiii", data[:16])
    if magic != IMAGES_MAGIC:
        raise IdxFormatError(
            f"image file magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}"
        )
    need = count * rows * cols
    body = np.frombuffer(data, dtype=np.uint8, offset=16)
    if body.size < need:
        raise IdxFormatError(
            f"image file declares {need} pixels but holds {body.size}"
        )
    return body[:need].reshape(count, rows, cols).copy()


def load_idx_labels(data: bytes) -> np.ndarray:
    """Decode an IDX label file into a uint8 array [N]."""
    if len(data) < 8:
        raise IdxFormatError(f"label file has only {len(data)} bytes of header")
    magic, count = struct.unpack(">ii", data[:8])
    if magic != LABELS_MAGIC:
        raise IdxFormatError(
            f"label file magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}"
        )
    body = np.frombuffer(data, dtype=np.uint8, offset=8)
    if body.size < count:
        raise IdxFormatError(f"label file declares {count} labels but holds {body.size}")
    return body[:count].copy()


def save_idx_images(images: np.ndarray) -> bytes:
    """Encode a uint8 array [N,H,W] as an IDX image file."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n, h, w = images.shape
    return struct.pack(">iiii", IMAGES_MAGIC, n, h, w) + images.tobytes()


def save_idx_labels(labels: np.ndarray) -> bytes:
    """Encode an integer label array [N] as an IDX label file."""
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    return struct.pack(">ii", LABELS_MAGIC, labels.shape[0]) + labels.tobytes()


def load_mnist_idx(
    images_bytes: bytes,
    labels_bytes: bytes,
    normalization: Normalization | None = None,
) -> Dataset:
    """Build a Dataset from paired IDX image/label bytes.

    Pixels are scaled to [0, 1] and normalized; the image/label counts must
    agree.
    """
    raw = load_idx_images(images_bytes)
    labels = load_idx_labels(labels_bytes)
    if raw.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"image count {raw.shape[0]} != label count {labels.shape[0]}"
        )
    scaled = raw.astype(np.float64) / 255.0
    scaled = scaled[:, None, :, :]  # [N,1,H,W]
    if normalization is not None:
        mean = np.asarray(normalization.mean, dtype=np.float64).reshape(1, -1, 1, 1)
        std = np.asarray(normalization.std, dtype=np.float64).reshape(1, -1, 1, 1)
        scaled = (scaled - mean) / std
    return Dataset(
        images=scaled.astype(np.float32), labels=labels.astype(np.int64)
    )
