"""MNIST IDX reading/writing and the normalization used everywhere downstream."""

import struct

import numpy as np

from .net import MNIST_MEAN, MNIST_STD

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def read_idx_images(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">iiii", f.read(16))
        if magic != IMAGES_MAGIC:
            raise ValueError(f"{path}: bad image magic 0x{magic:08x}")
        body = np.frombuffer(f.read(), dtype=np.uint8)
    return body.reshape(count, rows, cols).copy()


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, count = struct.unpack(">ii", f.read(8))
        if magic != LABELS_MAGIC:
            raise ValueError(f"{path}: bad label magic 0x{magic:08x}")
        body = np.frombuffer(f.read(), dtype=np.uint8)
    return body[:count].copy()


def write_idx_images(path, images: np.ndarray):
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", IMAGES_MAGIC, n, h, w))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def normalize_images(raw: np.ndarray) -> np.ndarray:
    """uint8 [N,H,W] to normalized float32 [N,1,H,W], matching the engine's math."""
    scaled = raw.astype(np.float64) / 255.0
    out = (scaled - MNIST_MEAN) / MNIST_STD
    return out[:, None, :, :].astype(np.float32)
