"""Insertion-based evaluation of saliency methods.

For each image, its pixels are ranked by saliency for the ground-truth class.
The top fraction PI of ranked pixels is copied onto a reference canvas (black
by default) and the masked image is classified. Sweeping PI over a grid yields
two curves: classification accuracy and the ratio of the true-class softmax
probability to the unmasked one. The area under each curve, anchored at
(PI=0, metric on the pure reference), summarizes a method in one number.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .attribution import DEFAULT_CONFIG, METHODS, EstimatorConfig, SaliencyMap, compute_saliency
from .data import Dataset
from .model import Model, forward_logits, forward_with_trace, make_reference
from .tensor import ShapeError, softmax

__all__ = [
    "MetricCurve",
    "default_pi_grid",
    "rank_pixels",
    "mask_insert",
    "auc",
    "accuracy_at_pi",
    "softmax_ratio_at_pi",
    "evaluate",
    "method_provider",
    "write_curves_csv",
    "write_auc_csv",
]


@dataclass(frozen=True)
class MetricCurve:
    """Metric values over an increasing PI grid, plus the PI=0 anchor value."""

    kind: str
    pis: tuple[float, ...]
    values: tuple[float, ...]
    anchor: float

    def __post_init__(self):
        if not self.pis:
            raise ValueError("curve needs at least one grid point")
        if any(not (0.0 < p <= 1.0) for p in self.pis):
            raise ValueError(f"grid values must lie in (0, 1]: {self.pis}")
        if any(b <= a for a, b in zip(self.pis, self.pis[1:])):
            raise ValueError(f"grid values must increase strictly: {self.pis}")
        if len(self.pis) != len(self.values):
            raise ValueError("one value per grid point required")
        if self.kind == "accuracy":
            vals = self.values + (self.anchor,)
            if any(not (0.0 <= v <= 1.0) for v in vals):
                raise ValueError("accuracy values must lie in [0, 1]")


def default_pi_grid() -> tuple[float, ...]:
    """5% steps from 0.05 to 1.00."""
    return tuple(round(0.05 * i, 10) for i in range(1, 21))


def rank_pixels(saliency) -> np.ndarray:
    """Flat pixel positions in descending saliency order, row-major on ties.

    Accepts a SaliencyMap (ranked on its normalized form) or a 2-D array.
    """
    if isinstance(saliency, SaliencyMap):
        scores = saliency.normalized
    else:
        scores = np.asarray(saliency)
    if scores.ndim != 2:
        raise ShapeError(f"pixel ranking needs a 2-D map, got {scores.shape}")
    flat = scores.astype(np.float64).ravel()
    return np.argsort(-flat, kind="stable").astype(np.int64)


def _insert_count(pi: float, n_pixels: int) -> int:
    if not (0.0 <= pi <= 1.0):
        raise ValueError(f"pi must lie in [0, 1], got {pi}")
    return min(n_pixels, math.ceil(pi * n_pixels))


def mask_insert(
    image: np.ndarray, ranking: np.ndarray, pi: float, reference_image: np.ndarray
) -> np.ndarray:
    """Copy the top ceil(pi * H * W) ranked pixel positions (all channels) from
    ``image`` onto ``reference_image``."""
    if image.shape != reference_image.shape:
        raise ShapeError(
            f"image {image.shape} and reference {reference_image.shape} differ"
        )
    h, w = image.shape[-2], image.shape[-1]
    count = _insert_count(pi, h * w)
    keep = np.zeros(h * w, dtype=bool)
    keep[ranking[:count]] = True
    keep = keep.reshape(h, w)
    return np.where(keep[None, :, :], image, reference_image).astype(np.float32)


def auc(curve: MetricCurve) -> float:
    """Trapezoidal area under the anchored curve, over the unit PI span."""
    xs = np.concatenate([[0.0], np.asarray(curve.pis, dtype=np.float64)])
    ys = np.concatenate([[curve.anchor], np.asarray(curve.values, dtype=np.float64)])
    area = float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1]) * 0.5))
    return area / 1.0


def method_provider(
    method: str,
    model: Model,
    *,
    reference: np.ndarray,
    config: EstimatorConfig = DEFAULT_CONFIG,
    steps: int = 100,
    seed: int = 0,
):
    """Per-image ranking provider for one attribution method.

    The returned callable maps (image, label, index) to a pixel ranking; the
    random method derives its generator from (seed, index) so results do not
    depend on evaluation order.
    """
    ref_trace = forward_with_trace(model, reference)

    def provider(image, label, index):
        rng = np.random.default_rng((seed, index)) if method == "random" else None
        smap = compute_saliency(
            method,
            model,
            image,
            int(label),
            reference=reference,
            ref_trace=ref_trace,
            config=config,
            steps=steps,
            rng=rng,
        )
        return rank_pixels(smap)

    return provider


def _metrics_on_grid(model, dataset, provider, pis, reference, threads=1):
    """Per-pi (mean accuracy, mean softmax ratio) plus the PI=0 anchors."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    ref_logits = forward_logits(model, reference)
    ref_pred = int(np.argmax(ref_logits))
    ref_probs = softmax(ref_logits).astype(np.float64)

    def job(i):
        image = dataset.images[i]
        label = int(dataset.labels[i])
        p_orig = softmax(forward_logits(model, image)).astype(np.float64)[label]
        ranking = provider(image, label, i)
        correct = np.zeros(len(pis))
        ratios = np.zeros(len(pis))
        for j, pi in enumerate(pis):
            masked = mask_insert(image, ranking, pi, reference)
            logits = forward_logits(model, masked)
            correct[j] = 1.0 if int(np.argmax(logits)) == label else 0.0
            ratios[j] = softmax(logits).astype(np.float64)[label] / p_orig
        anchor_c = 1.0 if ref_pred == label else 0.0
        anchor_r = ref_probs[label] / p_orig
        return correct, ratios, anchor_c, anchor_r

    indices = range(len(dataset))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, indices))
    else:
        results = [job(i) for i in indices]

    n = float(len(dataset))
    acc = np.sum([r[0] for r in results], axis=0) / n
    ratio = np.sum([r[1] for r in results], axis=0) / n
    anchor_acc = float(np.sum([r[2] for r in results]) / n)
    anchor_ratio = float(np.sum([r[3] for r in results]) / n)
    return acc, ratio, anchor_acc, anchor_ratio


def accuracy_at_pi(
    model: Model,
    dataset: Dataset,
    saliency_provider,
    pi: float,
    reference: np.ndarray | None = None,
    threads: int = 1,
) -> float:
    """Fraction of masked images classified as their true label at one PI."""
    if reference is None:
        reference = make_reference("black", model.input_shape, model.normalization)
    acc, _, _, _ = _metrics_on_grid(
        model, dataset, saliency_provider, [pi], reference, threads
    )
    return float(acc[0])


def softmax_ratio_at_pi(
    model: Model,
    dataset: Dataset,
    saliency_provider,
    pi: float,
    reference: np.ndarray | None = None,
    threads: int = 1,
) -> float:
    """Mean ratio of masked to original true-class probability at one PI."""
    if reference is None:
        reference = make_reference("black", model.input_shape, model.normalization)
    _, ratio, _, _ = _metrics_on_grid(
        model, dataset, saliency_provider, [pi], reference, threads
    )
    return float(ratio[0])


def evaluate(
    model: Model,
    dataset: Dataset,
    methods,
    pi_grid=None,
    *,
    reference: np.ndarray | None = None,
    config: EstimatorConfig = DEFAULT_CONFIG,
    steps: int = 100,
    seed: int = 0,
    threads: int = 1,
) -> dict[str, tuple[MetricCurve, MetricCurve]]:
    """Run the insertion protocol for several methods over a PI grid.

    Returns, per method, the (accuracy, softmax-ratio) curve pair. The work is
    parallelized across images; aggregation order is fixed, so results are
    deterministic for a given seed regardless of thread count.
    """
    methods = list(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown attribution method {m!r}")
    if len(set(methods)) != len(methods):
        raise ValueError("duplicate methods in evaluation list")
    pis = tuple(pi_grid) if pi_grid is not None else default_pi_grid()
    if reference is None:
        reference = make_reference("black", model.input_shape, model.normalization)

    out: dict[str, tuple[MetricCurve, MetricCurve]] = {}
    for method in methods:
        provider = method_provider(
            method, model, reference=reference, config=config, steps=steps, seed=seed
        )
        acc, ratio, anchor_acc, anchor_ratio = _metrics_on_grid(
            model, dataset, provider, pis, reference, threads
        )
        out[method] = (
            MetricCurve("accuracy", pis, tuple(float(v) for v in acc), anchor_acc),
            MetricCurve(
                "softmax-ratio", pis, tuple(float(v) for v in ratio), anchor_ratio
            ),
        )
    return out


def _fmt(v: float) -> str:
    return format(float(v), ".6g")


def write_curves_csv(path, curves: dict[str, tuple[MetricCurve, MetricCurve]]):
    """Write ``method,metric,pi,value`` rows, including the PI=0 anchor row."""
    with open(path, "w", newline="\n") as f:
        f.write("method,metric,pi,value\n")
        for method, pair in curves.items():
            for curve in pair:
                f.write(f"{method},{curve.kind},0,{_fmt(curve.anchor)}\n")
                for pi, v in zip(curve.pis, curve.values):
                    f.write(f"{method},{curve.kind},{_fmt(pi)},{_fmt(v)}\n")


def write_auc_csv(path, curves: dict[str, tuple[MetricCurve, MetricCurve]]):
    """Write ``method,accuracy_auc,softmax_auc`` rows."""
    with open(path, "w", newline="\n") as f:
        f.write("method,accuracy_auc,softmax_auc\n")
        for method, (acc_curve, sm_curve) in curves.items():
            f.write(f"{method},{_fmt(auc(acc_curve))},{_fmt(auc(sm_curve))}\n")
