"""Model description, AFW1 weight container, and activation tracing.

A model is an ordered list of layers over named weight tensors, with metadata
(input shape, class count, per-channel normalization) and a ``last_conv``
index marking the layer whose output is the feature-map stack. Everything
after that index is the FC head and may only contain linear, relu, flatten,
and gap layers. ``last_conv == -1`` designates the model input itself, which
is how purely fully-connected models are described.

The AFW1 container is: magic ``AFW1``, u32-LE version (= 1), u64-LE JSON
length, a UTF-8 JSON header, then the concatenated float32-LE tensor payloads
in offset order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ConvParams,
    ShapeError,
    conv2d_forward,
    conv_output_shape,
    global_avg_pool,
    linear_forward,
    maxpool_forward,
    relu,
    softmax,
)

__all__ = [
    "ModelError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedPayloadError",
    "TensorShapeError",
    "MissingLastConvError",
    "Normalization",
    "LayerSpec",
    "Model",
    "ActivationTrace",
    "forward_with_trace",
    "forward_logits",
    "predict",
    "make_reference",
    "load_model",
    "load_model_file",
    "save_model",
]

AFW1_MAGIC = b"AFW1"
AFW1_VERSION = 1

LAYER_KINDS = ("conv2d", "relu", "maxpool", "flatten", "linear", "gap")
HEAD_KINDS = ("linear", "relu", "flatten", "gap")


class ModelError(ValueError):
    """A model container or layer specification is invalid."""


class BadMagicError(ModelError):
    pass


class UnsupportedVersionError(ModelError):
    pass


class TruncatedPayloadError(ModelError):
    pass


class TensorShapeError(ModelError):
    pass


class MissingLastConvError(ModelError):
    pass


@dataclass(frozen=True)
class Normalization:
    """Per-channel affine normalization applied after scaling pixels to [0, 1]."""

    mean: tuple[float, ...] = (0.0,)
    std: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        object.__setattr__(self, "mean", tuple(float(m) for m in self.mean))
        object.__setattr__(self, "std", tuple(float(s) for s in self.std))
        if len(self.mean) != len(self.std):
            raise ModelError("normalization mean/std must have equal length")
        if any(s == 0.0 for s in self.std):
            raise ModelError("normalization std must be nonzero")

    def apply(self, raw: np.ndarray) -> np.ndarray:
        """Normalize raw [0,1] data of shape [C,...] channel-wise, returning float32."""
        a = np.asarray(raw, dtype=np.float64)
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if a.ndim >= 2:
            shape = (-1,) + (1,) * (a.ndim - 1)
            mean = mean.reshape(shape)
            std = std.reshape(shape)
        elif len(self.mean) != 1:
            raise ModelError("per-channel normalization needs a channel axis")
        return ((a - mean) / std).astype(np.float32)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a model: kind plus the hyperparameters that kind needs."""

    kind: str
    weight: str | None = None
    bias: str | None = None
    stride: tuple[int, int] | None = None
    padding: tuple[int, int] | None = None
    kernel: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ModelError(f"unknown layer kind {self.kind!r}")
        for name in ("stride", "padding", "kernel"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, (int(v[0]), int(v[1])))
        if self.kind == "conv2d":
            if self.weight is None or self.bias is None:
                raise ModelError("conv2d layer needs weight and bias tensor names")
        elif self.kind == "linear":
            if self.weight is None or self.bias is None:
                raise ModelError("linear layer needs weight and bias tensor names")
        elif self.kind == "maxpool":
            if self.kernel is None or self.stride is None:
                raise ModelError("maxpool layer needs kernel and stride")

    def conv_params(self) -> ConvParams:
        return ConvParams(
            stride=self.stride or (1, 1), padding=self.padding or (0, 0)
        )


@dataclass(frozen=True)
class Model:
    """Immutable layer graph plus its weight tensors and metadata."""

    layers: tuple[LayerSpec, ...]
    weights: dict[str, np.ndarray]
    input_shape: tuple[int, ...]
    class_count: int
    normalization: Normalization = Normalization()
    last_conv: int = -1
    layer_shapes: tuple[tuple[int, ...], ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        shapes = self._validate()
        object.__setattr__(self, "layer_shapes", shapes)

    def _validate(self) -> tuple[tuple[int, ...], ...]:
        if not self.layers:
            raise ModelError("model has no layers")
        if not (-1 <= self.last_conv < len(self.layers)):
            raise MissingLastConvError(
                f"last_conv index {self.last_conv} out of range for {len(self.layers)} layers"
            )
        shapes = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = self._output_shape(layer, shape)
            except (ShapeError, KeyError) as e:
                raise TensorShapeError(f"layer {i} ({layer.kind}): {e}") from e
            shapes.append(shape)
        for i in range(self.last_conv + 1, len(self.layers)):
            if self.layers[i].kind not in HEAD_KINDS:
                raise ModelError(
                    f"layer {i} ({self.layers[i].kind}) sits after the feature maps; "
                    "the head may only contain linear/relu/flatten/gap layers"
                )
        if shape != (self.class_count,):
            raise ModelError(
                f"final layer output shape {shape} does not match class count "
                f"{self.class_count}"
            )
        return tuple(shapes)

    def _tensor(self, name: str, ndim: int) -> np.ndarray:
        if name not in self.weights:
            raise TensorShapeError(f"weight tensor {name!r} missing from container")
        t = self.weights[name]
        if t.ndim != ndim:
            raise TensorShapeError(f"tensor {name!r} has {t.ndim} dims, expected {ndim}")
        return t

    def _output_shape(self, layer: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        if layer.kind == "conv2d":
            w = self._tensor(layer.weight, 4)
            b = self._tensor(layer.bias, 1)
            if b.shape[0] != w.shape[0]:
                raise TensorShapeError(
                    f"conv bias {layer.bias!r} length {b.shape[0]} != out channels {w.shape[0]}"
                )
            if len(in_shape) != 3:
                raise ShapeError(f"conv2d needs a 3-D input, got {in_shape}")
            return conv_output_shape(in_shape, w.shape, layer.conv_params())
        if layer.kind == "relu":
            return in_shape
        if layer.kind == "maxpool":
            if len(in_shape) != 3:
                raise ShapeError(f"maxpool needs a 3-D input, got {in_shape}")
            c, h, w = in_shape
            kh, kw = layer.kernel
            sh, sw = layer.stride
            if kh > h or kw > w:
                raise ShapeError(f"pool window {kh}x{kw} exceeds input {h}x{w}")
            return c, (h - kh) // sh + 1, (w - kw) // sw + 1
        if layer.kind == "flatten":
            return (int(np.prod(in_shape)),)
        if layer.kind == "linear":
            w = self._tensor(layer.weight, 2)
            b = self._tensor(layer.bias, 1)
            if b.shape[0] != w.shape[0]:
                raise TensorShapeError(
                    f"linear bias {layer.bias!r} length {b.shape[0]} != rows {w.shape[0]}"
                )
            if in_shape != (w.shape[1],):
                raise ShapeError(
                    f"linear weight {w.shape} incompatible with input {in_shape}"
                )
            return (w.shape[0],)
        if layer.kind == "gap":
            if len(in_shape) != 3:
                raise ShapeError(f"gap needs a 3-D input, got {in_shape}")
            return (in_shape[0],)
        raise ModelError(f"unknown layer kind {layer.kind!r}")

    @property
    def feature_map_shape(self) -> tuple[int, ...]:
        """Shape of the attribution feature-map stack ([K,h,w], or the input shape)."""
        if self.last_conv == -1:
            return self.input_shape
        return self.layer_shapes[self.last_conv]

    @property
    def head_indices(self) -> range:
        """Indices of the FC-head layers, in forward order."""
        return range(self.last_conv + 1, len(self.layers))


@dataclass(frozen=True)
class ActivationTrace:
    """All per-layer activations from one forward pass of one input."""

    model: Model
    input: np.ndarray
    outputs: tuple[np.ndarray, ...]
    pool_indices: dict[int, np.ndarray]

    def layer_input(self, i: int) -> np.ndarray:
        return self.outputs[i - 1] if i > 0 else self.input

    @property
    def feature_maps(self) -> np.ndarray:
        if self.model.last_conv == -1:
            return self.input
        return self.outputs[self.model.last_conv]

    @property
    def logits(self) -> np.ndarray:
        return self.outputs[-1]


def _run_layer(model: Model, layer: LayerSpec, x: np.ndarray):
    if layer.kind == "conv2d":
        return (
            conv2d_forward(
                x, model.weights[layer.weight], model.weights[layer.bias], layer.conv_params()
            ),
            None,
        )
    if layer.kind == "relu":
        return relu(x), None
    if layer.kind == "maxpool":
        out, idx = maxpool_forward(x, layer.kernel, layer.stride)
        return out, idx
    if layer.kind == "flatten":
        return np.ascontiguousarray(x).reshape(-1), None
    if layer.kind == "linear":
        return (
            linear_forward(x, model.weights[layer.weight], model.weights[layer.bias]),
            None,
        )
    if layer.kind == "gap":
        return global_avg_pool(x), None
    raise ModelError(f"unknown layer kind {layer.kind!r}")


def forward_with_trace(model: Model, x: np.ndarray) -> ActivationTrace:
    """Run a full forward pass, recording every layer output and pool argmax."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if tuple(x.shape) != model.input_shape:
        raise ShapeError(
            f"input shape {x.shape} does not match model input {model.input_shape}"
        )
    outputs = []
    pool_indices = {}
    cur = x
    for i, layer in enumerate(model.layers):
        cur, idx = _run_layer(model, layer, cur)
        if idx is not None:
            pool_indices[i] = idx
        outputs.append(cur)
    return ActivationTrace(
        model=model, input=x, outputs=tuple(outputs), pool_indices=pool_indices
    )


def forward_logits(model: Model, x: np.ndarray) -> np.ndarray:
    """Forward pass keeping only the final output (the logits)."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if tuple(x.shape) != model.input_shape:
        raise ShapeError(
            f"input shape {x.shape} does not match model input {model.input_shape}"
        )
    cur = x
    for layer in model.layers:
        cur, _ = _run_layer(model, layer, cur)
    return cur


def predict(model: Model, x: np.ndarray) -> tuple[int, np.ndarray]:
    """Return (argmax class, softmax probabilities); argmax ties go to the lowest index."""
    logits = forward_logits(model, x)
    return int(np.argmax(logits)), softmax(logits)


def make_reference(
    kind: str,
    input_shape: tuple[int, ...],
    normalization: Normalization | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Build a reference input: black (0), white (1), or seeded uniform pixels.

    Pixel values are fixed in raw [0, 1] space first and then pushed through
    the same normalization as real images.
    """
    shape = tuple(int(d) for d in input_shape)
    if kind == "black":
        raw = np.zeros(shape, dtype=np.float64)
    elif kind == "white":
        raw = np.ones(shape, dtype=np.float64)
    elif kind == "random":
        raw = np.random.default_rng(seed).uniform(0.0, 1.0, size=shape)
    else:
        raise ValueError(f"unknown reference kind {kind!r}")
    if normalization is None:
        return raw.astype(np.float32)
    return normalization.apply(raw)


def _layer_to_json(layer: LayerSpec) -> dict:
    d: dict = {"kind": layer.kind}
    if layer.weight is not None:
        d["weight"] = layer.weight
        d["bias"] = layer.bias
    if layer.kind == "conv2d":
        d["stride"] = list(layer.stride or (1, 1))
        d["padding"] = list(layer.padding or (0, 0))
    if layer.kind == "maxpool":
        d["kernel"] = list(layer.kernel)
        d["stride"] = list(layer.stride)
    return d


def _layer_from_json(d: dict) -> LayerSpec:
    return LayerSpec(
        kind=d.get("kind", ""),
        weight=d.get("weight"),
        bias=d.get("bias"),
        stride=tuple(d["stride"]) if "stride" in d else None,
        padding=tuple(d["padding"]) if "padding" in d else None,
        kernel=tuple(d["kernel"]) if "kernel" in d else None,
    )


def save_model(model: Model) -> bytes:
    """Serialize a model to AFW1 bytes (bit-exact round trip with load_model)."""
    order = []
    seen = set()
    for layer in model.layers:
        for name in (layer.weight, layer.bias):
            if name is not None and name not in seen:
                seen.add(name)
                order.append(name)
    tensors = []
    payload = bytearray()
    for name in order:
        t = np.ascontiguousarray(model.weights[name], dtype="<f4")
        tensors.append({"name": name, "shape": list(t.shape), "offset": len(payload)})
        payload.extend(t.tobytes())
    header = {
        "input_shape": list(model.input_shape),
        "class_count": model.class_count,
        "normalization": {
            "mean": list(model.normalization.mean),
            "std": list(model.normalization.std),
        },
        "last_conv": model.last_conv,
        "layers": [_layer_to_json(l) for l in model.layers],
        "tensors": tensors,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return (
        AFW1_MAGIC
        + struct.pack("<I", AFW1_VERSION)
        + struct.pack("<Q", len(blob))
        + blob
        + bytes(payload)
    )


def load_model(data: bytes) -> Model:
    """Parse AFW1 bytes into a validated Model.

    Raises BadMagicError, UnsupportedVersionError, TruncatedPayloadError,
    TensorShapeError, or MissingLastConvError for the corresponding defects.
    """
    if len(data) < 16:
        raise TruncatedPayloadError(f"container has only {len(data)} bytes")
    if data[:4] != AFW1_MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {AFW1_MAGIC!r}")
    (version,) = struct.unpack("<I", data[4:8])
    if version != AFW1_VERSION:
        raise UnsupportedVersionError(f"unsupported container version {version}")
    (json_len,) = struct.unpack("<Q", data[8:16])
    if 16 + json_len > len(data):
        raise TruncatedPayloadError(
            f"header declares {json_len} JSON bytes but only {len(data) - 16} remain"
        )
    try:
        header = json.loads(data[16 : 16 + json_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelError(f"malformed JSON header: {e}") from e

    for key in ("input_shape", "class_count", "layers", "tensors"):
        if key not in header:
            raise ModelError(f"JSON header missing {key!r}")
    if "last_conv" not in header:
        raise MissingLastConvError("JSON header has no last_conv tag")

    payload = data[16 + json_len :]
    weights: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        name = entry["name"]
        shape = tuple(int(d) for d in entry["shape"])
        offset = int(entry["offset"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if offset < 0 or offset + nbytes > len(payload):
            raise TruncatedPayloadError(
                f"tensor {name!r} needs bytes [{offset}, {offset + nbytes}) "
                f"but payload has {len(payload)}"
            )
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        weights[name] = arr.reshape(shape).copy()

    norm = header.get("normalization") or {"mean": [0.0], "std": [1.0]}
    return Model(
        layers=tuple(_layer_from_json(d) for d in header["layers"]),
        weights=weights,
        input_shape=tuple(header["input_shape"]),
        class_count=int(header["class_count"]),
        normalization=Normalization(mean=norm["mean"], std=norm["std"]),
        last_conv=int(header["last_conv"]),
    )


def load_model_file(path) -> Model:
    with open(path, "rb") as f:
        return load_model(f.read())
