"""Attribution methods for traced CNN forward passes.

The central idea: instead of backpropagating instantaneous activation
derivatives through the FC head, propagate secant slopes taken between the
target input's pre-activations and those of a fixed reference input. The
secant slope (sigma(y) - sigma(y_ref)) / (y - y_ref) stays nonzero wherever
the activation output actually moved between reference and input, so saturated
units keep contributing. Averaging the resulting modified gradients over each
feature map yields one importance score per map; the saliency map is the
importance-weighted sum of feature-map differences from the reference.

Gradient, integrated-gradients, and Grad-CAM baselines are provided on the
same trace machinery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ActivationTrace, Model, forward_with_trace
from .tensor import (
    ShapeError,
    conv2d_backward_data,
    global_avg_pool_backward,
    maxpool_backward,
)

__all__ = [
    "METHODS",
    "EstimatorConfig",
    "FmiVector",
    "SaliencyMap",
    "taylor_estimator",
    "modified_grad_fc_head",
    "fmi",
    "afmi_saliency",
    "input_gradient",
    "gradient_saliency",
    "ig_attributions",
    "integrated_gradients",
    "gradcam_weights",
    "gradcam",
    "random_saliency",
    "bilinear_resize",
    "normalize_saliency",
    "compute_saliency",
]

METHODS = ("afmi", "gradcam", "gradient", "ig", "random")


@dataclass(frozen=True)
class EstimatorConfig:
    """Secant estimator settings.

    ``epsilon`` is the threshold on |y - y_ref| below which the secant is
    numerically meaningless and the estimator falls back to the instantaneous
    derivative at y.
    """

    epsilon: float = 1e-7

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


DEFAULT_CONFIG = EstimatorConfig()


@dataclass(frozen=True)
class FmiVector:
    """Per-feature-map importance scores for one (input, class) pair."""

    scores: np.ndarray
    class_index: int
    reference_kind: str | None = None


@dataclass(frozen=True)
class SaliencyMap:
    """2-D attribution map with its input-resolution and display forms.

    ``raw`` is the unprocessed map at the method's native resolution,
    ``upsampled`` the bilinear resize to input resolution, and ``normalized``
    the display form: negative values clipped, then min-max scaled into
    [0, 1] (an all-constant map becomes all zeros). Pixel rankings are taken
    on ``normalized``.
    """

    raw: np.ndarray
    upsampled: np.ndarray
    normalized: np.ndarray
    method: str


def taylor_estimator(y, y_ref, activation: str = "relu", config: EstimatorConfig = DEFAULT_CONFIG):
    """Secant slope of the activation between ``y_ref`` and ``y``.

    Returns (sigma(y) - sigma(y_ref)) / (y - y_ref), falling back to the
    instantaneous derivative sigma'(y) when |y - y_ref| < epsilon (with
    relu'(0) taken as 0). Accepts scalars or arrays; always float64.

    Only ReLU is implemented. Other activations would substitute their own
    secant or average-derivative closed form here (for smooth sigma the
    fallback already equals the secant's limit).
    """
    if activation != "relu":
        raise ValueError(f"unsupported activation {activation!r}")
    y64 = np.asarray(y, dtype=np.float64)
    r64 = np.asarray(y_ref, dtype=np.float64)
    diff = y64 - r64
    degenerate = np.abs(diff) < config.epsilon
    safe = np.where(degenerate, 1.0, diff)
    secant = (np.maximum(y64, 0.0) - np.maximum(r64, 0.0)) / safe
    instantaneous = (y64 > 0.0).astype(np.float64)
    out = np.where(degenerate, instantaneous, secant)
    if np.isscalar(y) or np.ndim(y) == 0:
        return float(out)
    return out


def _check_same_model(trace: ActivationTrace, ref_trace: ActivationTrace):
    if trace.model is not ref_trace.model:
        raise ValueError("trace and reference trace come from different models")


def _check_class(model: Model, class_index: int):
    if not (0 <= class_index < model.class_count):
        raise ValueError(
            f"class index {class_index} out of range [0, {model.class_count})"
        )


def _layer_input_shape(model: Model, i: int) -> tuple[int, ...]:
    return model.layer_shapes[i - 1] if i > 0 else model.input_shape


def _sweep_head(trace: ActivationTrace, class_index: int, relu_rule) -> np.ndarray:
    """Backpropagate a one-hot seed from the final output to the feature maps.

    ``relu_rule(layer_index)`` supplies the elementwise multiplier used at
    each ReLU layer; linear layers contribute their transposed weights and
    flatten/gap apply their exact adjoints. Runs in float64.
    """
    model = trace.model
    g = np.zeros(model.class_count, dtype=np.float64)
    g[class_index] = 1.0
    for i in reversed(model.head_indices):
        layer = model.layers[i]
        if layer.kind == "linear":
            g = model.weights[layer.weight].astype(np.float64).T @ g
        elif layer.kind == "relu":
            g = g * relu_rule(i)
        elif layer.kind == "flatten":
            g = g.reshape(_layer_input_shape(model, i))
        elif layer.kind == "gap":
            c, h, w = _layer_input_shape(model, i)
            g = np.broadcast_to(g[:, None, None] / float(h * w), (c, h, w)).copy()
        else:  # unreachable: Model validation restricts head kinds
            raise ShapeError(f"layer kind {layer.kind!r} not allowed in the head")
    return g


def modified_grad_fc_head(
    trace: ActivationTrace,
    ref_trace: ActivationTrace,
    class_index: int,
    config: EstimatorConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """Secant-estimator gradient of one logit w.r.t. the feature-map stack.

    Equivalent to summing, over every path from each feature-map entry to the
    chosen logit, the product of linear weights and per-ReLU secant slopes;
    computed by a reverse sweep instead of path enumeration. The result has
    the feature-map shape and satisfies the completeness identity: its inner
    product with (feature_maps - reference feature_maps) telescopes to the
    difference of the chosen output between input and reference, exactly,
    whenever no epsilon fallback fires.
    """
    _check_same_model(trace, ref_trace)
    _check_class(trace.model, class_index)

    def rule(i: int) -> np.ndarray:
        return taylor_estimator(
            trace.layer_input(i), ref_trace.layer_input(i), "relu", config
        )

    return _sweep_head(trace, class_index, rule).astype(np.float32)


def _plain_grad_fc_head(trace: ActivationTrace, class_index: int) -> np.ndarray:
    _check_class(trace.model, class_index)

    def rule(i: int) -> np.ndarray:
        return (np.asarray(trace.layer_input(i), dtype=np.float64) > 0.0).astype(
            np.float64
        )

    return _sweep_head(trace, class_index, rule).astype(np.float32)


def fmi(
    trace: ActivationTrace,
    ref_trace: ActivationTrace,
    class_index: int,
    config: EstimatorConfig = DEFAULT_CONFIG,
    reference_kind: str | None = None,
) -> FmiVector:
    """Feature-map importance: mean modified gradient over each feature map."""
    g = modified_grad_fc_head(trace, ref_trace, class_index, config)
    g64 = g.astype(np.float64)
    scores = g64 if g64.ndim == 1 else g64.mean(axis=tuple(range(1, g64.ndim)))
    return FmiVector(
        scores=scores.astype(np.float32),
        class_index=class_index,
        reference_kind=reference_kind,
    )


def bilinear_resize(img: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Bilinear interpolation of a 2-D map (half-pixel-centered sampling)."""
    h, w = img.shape
    oh, ow = out_shape
    a = np.asarray(img, dtype=np.float64)
    sy = np.clip((np.arange(oh) + 0.5) * (h / oh) - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(ow) + 0.5) * (w / ow) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy - y0)[:, None]
    wx = (sx - x0)[None, :]
    out = (
        a[np.ix_(y0, x0)] * (1 - wy) * (1 - wx)
        + a[np.ix_(y0, x1)] * (1 - wy) * wx
        + a[np.ix_(y1, x0)] * wy * (1 - wx)
        + a[np.ix_(y1, x1)] * wy * wx
    )
    return out.astype(np.float32)


def normalize_saliency(m: np.ndarray) -> np.ndarray:
    """Clip negatives, then min-max scale to [0, 1]; constant maps become zeros."""
    clipped = np.maximum(np.asarray(m, dtype=np.float64), 0.0)
    lo = clipped.min()
    hi = clipped.max()
    if hi - lo == 0.0:
        return np.zeros_like(clipped, dtype=np.float32)
    return ((clipped - lo) / (hi - lo)).astype(np.float32)


def _finish_map(raw: np.ndarray, input_shape: tuple[int, ...], method: str) -> SaliencyMap:
    target = (input_shape[-2], input_shape[-1])
    raw = np.asarray(raw, dtype=np.float32)
    upsampled = raw if raw.shape == target else bilinear_resize(raw, target)
    return SaliencyMap(
        raw=raw,
        upsampled=upsampled,
        normalized=normalize_saliency(upsampled),
        method=method,
    )


def afmi_saliency(
    trace: ActivationTrace,
    ref_trace: ActivationTrace,
    class_index: int,
    config: EstimatorConfig = DEFAULT_CONFIG,
) -> SaliencyMap:
    """Importance-weighted sum of feature-map differences from the reference."""
    _check_same_model(trace, ref_trace)
    a = trace.feature_maps
    if a.ndim != 3:
        raise ShapeError(
            f"saliency needs a [K,h,w] feature-map stack, got shape {a.shape}"
        )
    vec = fmi(trace, ref_trace, class_index, config)
    diff = a.astype(np.float64) - ref_trace.feature_maps.astype(np.float64)
    raw = np.einsum("k,kij->ij", vec.scores.astype(np.float64), diff)
    return _finish_map(raw, trace.model.input_shape, "afmi")


def input_gradient(
    model: Model,
    x: np.ndarray,
    class_index: int,
    trace: ActivationTrace | None = None,
) -> np.ndarray:
    """Plain gradient of one final-layer output w.r.t. the model input."""
    _check_class(model, class_index)
    if trace is None:
        trace = forward_with_trace(model, x)
    g = np.zeros(model.class_count, dtype=np.float32)
    g[class_index] = 1.0
    for i in reversed(range(len(model.layers))):
        layer = model.layers[i]
        in_shape = _layer_input_shape(model, i)
        if layer.kind == "linear":
            g = (
                model.weights[layer.weight].astype(np.float64).T
                @ g.astype(np.float64)
            ).astype(np.float32)
        elif layer.kind == "relu":
            g = (g * (trace.layer_input(i) > 0)).astype(np.float32)
        elif layer.kind == "flatten":
            g = g.reshape(in_shape)
        elif layer.kind == "maxpool":
            g = maxpool_backward(g, trace.pool_indices[i], in_shape)
        elif layer.kind == "conv2d":
            g = conv2d_backward_data(
                g, model.weights[layer.weight], layer.conv_params(), in_shape
            )
        elif layer.kind == "gap":
            g = global_avg_pool_backward(g, in_shape)
    return g


def gradient_saliency(model: Model, x: np.ndarray, class_index: int) -> SaliencyMap:
    """Pixel saliency from the plain input gradient, max-|.| over channels."""
    g = input_gradient(model, x, class_index)
    if g.ndim != 3:
        raise ShapeError(f"gradient saliency needs a [C,H,W] input, got {g.shape}")
    collapsed = np.abs(g.astype(np.float64)).max(axis=0)
    return _finish_map(collapsed, model.input_shape, "gradient")


def ig_attributions(
    model: Model,
    x: np.ndarray,
    reference: np.ndarray,
    class_index: int,
    steps: int = 100,
) -> np.ndarray:
    """Signed per-element integrated gradients along the straight path.

    Right-endpoint Riemann sum with ``steps`` points: the gradient is averaged
    at reference + (t/steps) * (x - reference) for t = 1..steps, then scaled
    elementwise by (x - reference). The elementwise sum approximates the
    difference of the chosen output between x and the reference.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    x64 = np.asarray(x, dtype=np.float64)
    r64 = np.asarray(reference, dtype=np.float64)
    if x64.shape != r64.shape:
        raise ShapeError(f"input {x64.shape} and reference {r64.shape} differ")
    diff = x64 - r64
    total = np.zeros_like(diff)
    for t in range(1, steps + 1):
        xt = (r64 + (t / steps) * diff).astype(np.float32)
        total += input_gradient(model, xt, class_index).astype(np.float64)
    return (diff * total / steps).astype(np.float32)


def integrated_gradients(
    model: Model,
    x: np.ndarray,
    reference: np.ndarray,
    class_index: int,
    steps: int = 100,
) -> SaliencyMap:
    """Pixel saliency from integrated gradients, max-|.| over channels."""
    attr = ig_attributions(model, x, reference, class_index, steps)
    if attr.ndim != 3:
        raise ShapeError(f"IG saliency needs a [C,H,W] input, got {attr.shape}")
    collapsed = np.abs(attr.astype(np.float64)).max(axis=0)
    return _finish_map(collapsed, model.input_shape, "ig")


def gradcam_weights(trace: ActivationTrace, class_index: int) -> np.ndarray:
    """Channel weights: spatial mean of the plain logit gradient per feature map."""
    g = _plain_grad_fc_head(trace, class_index).astype(np.float64)
    if g.ndim == 1:
        return g.astype(np.float32)
    return g.mean(axis=tuple(range(1, g.ndim))).astype(np.float32)


def gradcam(trace: ActivationTrace, class_index: int) -> SaliencyMap:
    """Class activation map: ReLU of the weight-summed feature-map stack."""
    a = trace.feature_maps
    if a.ndim != 3:
        raise ShapeError(
            f"saliency needs a [K,h,w] feature-map stack, got shape {a.shape}"
        )
    alpha = gradcam_weights(trace, class_index).astype(np.float64)
    raw = np.maximum(np.einsum("k,kij->ij", alpha, a.astype(np.float64)), 0.0)
    return _finish_map(raw, trace.model.input_shape, "gradcam")


def random_saliency(input_shape: tuple[int, ...], rng: np.random.Generator) -> SaliencyMap:
    """Uniform-random saliency map; the control baseline for evaluations."""
    h, w = input_shape[-2], input_shape[-1]
    raw = rng.uniform(0.0, 1.0, size=(h, w)).astype(np.float32)
    return _finish_map(raw, tuple(input_shape), "random")


def compute_saliency(
    method: str,
    model: Model,
    image: np.ndarray,
    class_index: int,
    *,
    reference: np.ndarray | None = None,
    ref_trace: ActivationTrace | None = None,
    trace: ActivationTrace | None = None,
    config: EstimatorConfig = DEFAULT_CONFIG,
    steps: int = 100,
    rng: np.random.Generator | None = None,
) -> SaliencyMap:
    """Dispatch a saliency computation by method name.

    ``afmi`` needs a reference (or its precomputed trace); ``ig`` needs a
    reference; ``random`` needs an rng. ``trace``/``ref_trace`` are optional
    precomputed forward traces for the image and reference.
    """
    if method not in METHODS:
        raise ValueError(f"unknown attribution method {method!r}")
    if method == "random":
        if rng is None:
            raise ValueError("random saliency needs an rng")
        return random_saliency(model.input_shape, rng)
    if method == "gradient":
        return gradient_saliency(model, image, class_index)
    if method == "ig":
        if reference is None:
            raise ValueError("integrated gradients needs a reference image")
        return integrated_gradients(model, image, reference, class_index, steps)
    if trace is None:
        trace = forward_with_trace(model, image)
    if method == "gradcam":
        return gradcam(trace, class_index)
    # afmi
    if ref_trace is None:
        if reference is None:
            raise ValueError("afmi needs a reference image or reference trace")
        ref_trace = forward_with_trace(model, reference)
    return afmi_saliency(trace, ref_trace, class_index, config)
