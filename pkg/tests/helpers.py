"""Shared builders for small test models."""

import numpy as np

from afmi.model import LayerSpec, Model, Normalization


def f32(a):
    return np.asarray(a, dtype=np.float32)


def linear_model(weight, bias, last_conv=-1, input_shape=None, normalization=None):
    """Single linear layer as a complete model."""
    w = f32(weight)
    b = f32(bias)
    return Model(
        layers=(LayerSpec(kind="linear", weight="w", bias="b"),),
        weights={"w": w, "b": b},
        input_shape=input_shape or (w.shape[1],),
        class_count=w.shape[0],
        normalization=normalization or Normalization(),
        last_conv=last_conv,
    )


def saturating_chain_model():
    """1-D two-layer ReLU chain whose plain gradient vanishes for inputs > 1.

    f(a) = relu(-relu(-a + 1) + 2); f(0) = 1, f(2) = 2, f'(2) = 0.
    """
    return Model(
        layers=(
            LayerSpec(kind="linear", weight="w1", bias="b1"),
            LayerSpec(kind="relu"),
            LayerSpec(kind="linear", weight="w2", bias="b2"),
            LayerSpec(kind="relu"),
        ),
        weights={
            "w1": f32([[-1.0]]),
            "b1": f32([1.0]),
            "w2": f32([[-1.0]]),
            "b2": f32([2.0]),
        },
        input_shape=(1,),
        class_count=1,
        last_conv=-1,
    )


def random_fc_model(rng, d_in, hidden, class_count):
    """Fully connected ReLU net: d_in -> hidden[0] -> ... -> class_count."""
    layers = []
    weights = {}
    dims = [d_in] + list(hidden) + [class_count]
    for i in range(len(dims) - 1):
        wname, bname = f"w{i}", f"b{i}"
        weights[wname] = f32(rng.normal(size=(dims[i + 1], dims[i])) / np.sqrt(dims[i]))
        weights[bname] = f32(rng.normal(size=dims[i + 1]) * 0.1)
        layers.append(LayerSpec(kind="linear", weight=wname, bias=bname))
        if i < len(dims) - 2:
            layers.append(LayerSpec(kind="relu"))
    return Model(
        layers=tuple(layers),
        weights=weights,
        input_shape=(d_in,),
        class_count=class_count,
        last_conv=-1,
    )


def feature_head_model(rng, k, h, w, class_count, hidden=()):
    """Model whose input is a [k,h,w] feature stack feeding a flatten + FC head."""
    layers = [LayerSpec(kind="flatten")]
    weights = {}
    dims = [k * h * w] + list(hidden) + [class_count]
    for i in range(len(dims) - 1):
        wname, bname = f"w{i}", f"b{i}"
        weights[wname] = f32(rng.normal(size=(dims[i + 1], dims[i])) / np.sqrt(dims[i]))
        weights[bname] = f32(rng.normal(size=dims[i + 1]) * 0.1)
        layers.append(LayerSpec(kind="linear", weight=wname, bias=bname))
        if i < len(dims) - 2:
            layers.append(LayerSpec(kind="relu"))
    return Model(
        layers=tuple(layers),
        weights=weights,
        input_shape=(k, h, w),
        class_count=class_count,
        last_conv=-1,
    )


def random_cnn_model(rng, in_shape=(1, 8, 8), c1=4, c2=6, hidden=8, class_count=3):
    """Small conv-relu-conv-relu-pool-flatten-linear-relu-linear model."""
    c_in, h, w = in_shape
    weights = {
        "c1w": f32(rng.normal(size=(c1, c_in, 3, 3)) / 3.0),
        "c1b": f32(rng.normal(size=c1) * 0.1),
        "c2w": f32(rng.normal(size=(c2, c1, 3, 3)) / (3.0 * np.sqrt(c1))),
        "c2b": f32(rng.normal(size=c2) * 0.1),
    }
    h2, w2 = h - 2, w - 2  # two valid 3x3 convs
    h3, w3 = h2 - 2, w2 - 2
    hp, wp = h3 // 2, w3 // 2
    flat = c2 * hp * wp
    weights["f1w"] = f32(rng.normal(size=(hidden, flat)) / np.sqrt(flat))
    weights["f1b"] = f32(rng.normal(size=hidden) * 0.1)
    weights["f2w"] = f32(rng.normal(size=(class_count, hidden)) / np.sqrt(hidden))
    weights["f2b"] = f32(rng.normal(size=class_count) * 0.1)
    layers = (
        LayerSpec(kind="conv2d", weight="c1w", bias="c1b", stride=(1, 1), padding=(0, 0)),
        LayerSpec(kind="relu"),
        LayerSpec(kind="conv2d", weight="c2w", bias="c2b", stride=(1, 1), padding=(0, 0)),
        LayerSpec(kind="relu"),
        LayerSpec(kind="maxpool", kernel=(2, 2), stride=(2, 2)),
        LayerSpec(kind="flatten"),
        LayerSpec(kind="linear", weight="f1w", bias="f1b"),
        LayerSpec(kind="relu"),
        LayerSpec(kind="linear", weight="f2w", bias="f2b"),
    )
    return Model(
        layers=layers,
        weights=weights,
        input_shape=in_shape,
        class_count=class_count,
        last_conv=4,  # the maxpool output is the feature-map stack
    )
