"""Dense float32 tensor kernels for small CNN inference.

Tensors are plain ``numpy.ndarray`` objects with dtype float32 and row-major
layout. Every kernel is a pure function: inputs are never mutated, outputs are
freshly allocated. Reductions inside conv/linear kernels accumulate in float64
and the result is truncated back to float32, so results are deterministic and
independent of BLAS summation order differences at the float32 level.

Kernels operate on single images (no batch axis); parallelism is expected to
come from running distinct images concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ShapeError",
    "ConvParams",
    "as_f32",
    "conv2d_forward",
    "conv2d_backward_data",
    "maxpool_forward",
    "maxpool_backward",
    "relu",
    "relu_backward",
    "linear_forward",
    "linear_backward_data",
    "global_avg_pool",
    "global_avg_pool_backward",
    "softmax",
]


class ShapeError(ValueError):
    """Raised when tensor shapes are inconsistent with an operation."""


def as_f32(a) -> np.ndarray:
    """Return ``a`` as a contiguous float32 array (no copy if already one)."""
    return np.ascontiguousarray(a, dtype=np.float32)


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


@dataclass(frozen=True)
class ConvParams:
    """Stride and zero-padding of a 2-D convolution, one entry per spatial axis."""

    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self):
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "padding", _pair(self.padding))
        if self.stride[0] < 1 or self.stride[1] < 1:
            raise ShapeError(f"stride must be positive, got {self.stride}")
        if self.padding[0] < 0 or self.padding[1] < 0:
            raise ShapeError(f"padding must be non-negative, got {self.padding}")


def conv_output_shape(
    input_shape: tuple[int, int, int],
    weight_shape: tuple[int, int, int, int],
    params: ConvParams,
) -> tuple[int, int, int]:
    """Output shape [C_out, H', W'] of ``conv2d_forward`` for the given input."""
    c_in, h, w = input_shape
    c_out, c_in_w, kh, kw = weight_shape
    if c_in != c_in_w:
        raise ShapeError(
            f"conv2d: input has {c_in} channels but weight expects {c_in_w}"
        )
    (sh, sw), (ph, pw) = params.stride, params.padding
    h_out = (h + 2 * ph - kh) // sh + 1
    w_out = (w + 2 * pw - kw) // sw + 1
    if h + 2 * ph < kh or w + 2 * pw < kw or h_out < 1 or w_out < 1:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} does not fit input {h}x{w} "
            f"with padding {params.padding}"
        )
    return c_out, h_out, w_out


def conv2d_forward(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray, params: ConvParams
) -> np.ndarray:
    """2-D cross-correlation of ``x`` [C_in,H,W] with ``weight`` [C_out,C_in,kh,kw].

    Adds a per-output-channel ``bias`` [C_out]. Returns [C_out,H',W'].
    """
    if x.ndim != 3 or weight.ndim != 4:
        raise ShapeError(
            f"conv2d: expected 3-D input and 4-D weight, got {x.shape} and {weight.shape}"
        )
    c_out, h_out, w_out = conv_output_shape(x.shape, weight.shape, params)
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    (sh, sw), (ph, pw) = params.stride, params.padding
    kh, kw = weight.shape[2], weight.shape[3]

    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw))).astype(np.float64)
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    out = np.einsum(
        "cyxij,ocij->oyx", windows, weight.astype(np.float64), optimize=True
    )
    out += bias.astype(np.float64)[:, None, None]
    return out.astype(np.float32)


def conv2d_backward_data(
    grad_out: np.ndarray,
    weight: np.ndarray,
    params: ConvParams,
    input_shape: tuple[int, int, int],
) -> np.ndarray:
    """Exact adjoint of ``conv2d_forward`` with respect to its input.

    ``grad_out`` must have the forward output shape for ``input_shape``; the bias
    contributes nothing to the input gradient.
    """
    expected = conv_output_shape(tuple(input_shape), weight.shape, params)
    if tuple(grad_out.shape) != expected:
        raise ShapeError(
            f"conv2d backward: grad_out shape {grad_out.shape} != forward output {expected}"
        )
    (sh, sw), (ph, pw) = params.stride, params.padding
    c_out, kh, kw = weight.shape[0], weight.shape[2], weight.shape[3]
    c_in, h, w = input_shape
    h_out, w_out = expected[1], expected[2]

    g = grad_out.astype(np.float64)
    w64 = weight.astype(np.float64)
    grad_padded = np.zeros((c_in, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            contrib = np.einsum("oyx,oc->cyx", g, w64[:, :, i, j], optimize=True)
            grad_padded[:, i : i + sh * h_out : sh, j : j + sw * w_out : sw] += contrib
    grad_in = grad_padded[:, ph : ph + h, pw : pw + w]
    return grad_in.astype(np.float32)


def maxpool_forward(
    x: np.ndarray, kernel, stride
) -> tuple[np.ndarray, np.ndarray]:
    """Max pooling over [C,H,W] windows; returns (output, flat argmax indices).

    Ties inside a window resolve to the lowest flat input index, making the
    forward/backward pair deterministic. The index array has the output shape
    and addresses ``x.ravel()``.
    """
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    if x.ndim != 3:
        raise ShapeError(f"maxpool: expected 3-D input, got {x.shape}")
    c, h, w = x.shape
    if kh > h or kw > w:
        raise ShapeError(f"maxpool: window {kh}x{kw} exceeds input {h}x{w}")
    h_out = (h - kh) // sh + 1
    w_out = (w - kw) // sw + 1

    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    flat_windows = windows.reshape(c, h_out, w_out, kh * kw)
    # np.argmax takes the first maximum: window-local row-major order coincides
    # with ascending flat input order, which is exactly the tie rule.
    local = np.argmax(flat_windows, axis=3)
    out = np.take_along_axis(flat_windows, local[..., None], axis=3)[..., 0]

    oy = np.arange(h_out)[None, :, None]
    ox = np.arange(w_out)[None, None, :]
    ci = np.arange(c)[:, None, None]
    rows = oy * sh + local // kw
    cols = ox * sw + local % kw
    index = ci * (h * w) + rows * w + cols
    return out.astype(np.float32), index.astype(np.int64)


def maxpool_backward(
    grad_out: np.ndarray, index: np.ndarray, input_shape: tuple[int, int, int]
) -> np.ndarray:
    """Route ``grad_out`` to the argmax positions recorded by ``maxpool_forward``."""
    if grad_out.shape != index.shape:
        raise ShapeError(
            f"maxpool backward: grad_out shape {grad_out.shape} != index shape {index.shape}"
        )
    flat = np.zeros(int(np.prod(input_shape)), dtype=np.float64)
    np.add.at(flat, index.ravel(), grad_out.astype(np.float64).ravel())
    return flat.reshape(input_shape).astype(np.float32)


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(x, 0).astype(np.float32)


def relu_backward(grad_out: np.ndarray, pre_activation: np.ndarray) -> np.ndarray:
    """Multiply by the ReLU derivative at ``pre_activation``; derivative at 0 is 0."""
    if grad_out.shape != pre_activation.shape:
        raise ShapeError(
            f"relu backward: grad_out shape {grad_out.shape} != "
            f"pre-activation shape {pre_activation.shape}"
        )
    return (grad_out * (pre_activation > 0)).astype(np.float32)


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map ``weight @ x + bias`` for x [d_in], weight [d_out,d_in], bias [d_out]."""
    if weight.ndim != 2 or x.shape != (weight.shape[1],):
        raise ShapeError(
            f"linear: input shape {x.shape} incompatible with weight {weight.shape}"
        )
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
    y = weight.astype(np.float64) @ x.astype(np.float64) + bias.astype(np.float64)
    return y.astype(np.float32)


def linear_backward_data(grad_out: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Adjoint of ``linear_forward`` w.r.t. the input: ``weight.T @ grad_out``."""
    if grad_out.shape != (weight.shape[0],):
        raise ShapeError(
            f"linear backward: grad_out shape {grad_out.shape} != ({weight.shape[0]},)"
        )
    return (weight.astype(np.float64).T @ grad_out.astype(np.float64)).astype(
        np.float32
    )


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Per-channel spatial mean of [C,H,W], returning [C]."""
    if x.ndim != 3:
        raise ShapeError(f"global_avg_pool: expected 3-D input, got {x.shape}")
    return x.astype(np.float64).mean(axis=(1, 2)).astype(np.float32)


def global_avg_pool_backward(
    grad_out: np.ndarray, input_shape: tuple[int, int, int]
) -> np.ndarray:
    """Adjoint of ``global_avg_pool``: spread each channel grad uniformly / (H*W)."""
    c, h, w = input_shape
    if grad_out.shape != (c,):
        raise ShapeError(
            f"global_avg_pool backward: grad_out shape {grad_out.shape} != ({c},)"
        )
    g = grad_out.astype(np.float64) / float(h * w)
    return np.broadcast_to(g[:, None, None], (c, h, w)).astype(np.float32)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stabilized softmax over a 1-D logit vector."""
    if logits.ndim != 1:
        raise ShapeError(f"softmax: expected 1-D logits, got {logits.shape}")
    z = logits.astype(np.float64)
    z = z - z.max()
    e = np.exp(z)
    return (e / e.sum()).astype(np.float32)
