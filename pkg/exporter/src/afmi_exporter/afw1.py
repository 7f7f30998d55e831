"""AFW1 container writer.

Layout: magic "AFW1", u32-LE version 1, u64-LE JSON length, UTF-8 JSON header
(layers, hyperparameters, input shape, class count, normalization, last_conv
tag, tensor directory), then float32-LE payloads concatenated in offset order.
Written independently of the consuming engine so the two implementations
cross-validate each other through the format.
"""

import hashlib
import json
import struct

import numpy as np

from .net import MNIST_MEAN, MNIST_STD

MAGIC = b"AFW1"
VERSION = 1

# inference-time layer sequence of Net (dropout omitted); the max-pool output
# is the 64x12x12 feature-map stack the attribution engine works on
LAYERS = [
    {"kind": "conv2d", "weight": "conv1.weight", "bias": "conv1.bias",
     "stride": [1, 1], "padding": [0, 0]},
    {"kind": "relu"},
    {"kind": "conv2d", "weight": "conv2.weight", "bias": "conv2.bias",
     "stride": [1, 1], "padding": [0, 0]},
    {"kind": "relu"},
    {"kind": "maxpool", "kernel": [2, 2], "stride": [2, 2]},
    {"kind": "flatten"},
    {"kind": "linear", "weight": "fc1.weight", "bias": "fc1.bias"},
    {"kind": "relu"},
    {"kind": "linear", "weight": "fc2.weight", "bias": "fc2.bias"},
]
LAST_CONV_INDEX = 4

TENSOR_ORDER = [
    "conv1.weight", "conv1.bias",
    "conv2.weight", "conv2.bias",
    "fc1.weight", "fc1.bias",
    "fc2.weight", "fc2.bias",
]


def model_header(tensors: dict[str, np.ndarray]) -> tuple[dict, bytes]:
    """Build the JSON header and payload bytes for the fixed architecture."""
    directory = []
    payload = bytearray()
    for name in TENSOR_ORDER:
        t = np.ascontiguousarray(tensors[name], dtype="<f4")
        directory.append(
            {"name": name, "shape": list(t.shape), "offset": len(payload)}
        )
        payload.extend(t.tobytes())
    header = {
        "input_shape": [1, 28, 28],
        "class_count": 10,
        "normalization": {"mean": [MNIST_MEAN], "std": [MNIST_STD]},
        "last_conv": LAST_CONV_INDEX,
        "layers": LAYERS,
        "tensors": directory,
    }
    return header, bytes(payload)


def write_afw1(path, tensors: dict[str, np.ndarray]) -> dict:
    """Write the container; returns summary info including the payload checksum."""
    header, payload = model_header(tensors)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(payload)
    return {
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "architecture": header,
    }


def payload_checksum(path) -> tuple[int, str]:
    """(payload length, sha256) of an existing AFW1 file."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise ValueError("not an AFW1 file")
    (json_len,) = struct.unpack("<Q", data[8:16])
    payload = data[16 + json_len:]
    return len(payload), hashlib.sha256(payload).hexdigest()


def state_dict_tensors(model) -> dict[str, np.ndarray]:
    """Extract the exported tensors from the torch module, as numpy arrays."""
    state = model.state_dict()
    return {name: state[name].detach().cpu().numpy() for name in TENSOR_ORDER}
