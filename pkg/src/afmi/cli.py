"""Command-line interface: predict, attribute, evaluate, faithfulness.

Every command is deterministic given its flags (seeds included) and exits 0
only when all outputs were fully written. The AFMI_LOG environment variable
(error | info | debug) controls stderr verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .attribution import (
    METHODS,
    EstimatorConfig,
    compute_saliency,
    ig_attributions,
)
from .data import (
    Dataset,
    IdxFormatError,
    load_idx_images,
    load_mnist_idx,
    save_idx_labels,
)
from .faithfulness import (
    build_prototypes,
    faithfulness_report,
    write_accuracy_csv,
    write_prototypes_csv,
)
from .insertion import evaluate, rank_pixels, write_auc_csv, write_curves_csv
from .model import (
    Model,
    ModelError,
    forward_with_trace,
    load_model_file,
    make_reference,
    predict,
)
from .tensor import ShapeError

log = logging.getLogger("afmi")


def _configure_logging():
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("AFMI_LOG", "error").lower(), logging.ERROR
    )
    logging.basicConfig(stream=sys.stderr, level=level, format="afmi: %(message)s")


def parse_reference(spec: str) -> tuple[str, int]:
    """Parse black | white | random:<seed> into (kind, seed)."""
    if spec in ("black", "white"):
        return spec, 0
    if spec.startswith("random"):
        _, _, seed = spec.partition(":")
        return "random", int(seed) if seed else 0
    raise ValueError(f"unknown reference {spec!r} (use black, white, or random:<seed>)")


def parse_pi_grid(spec: str) -> tuple[float, ...]:
    """Parse ``lo:hi:step`` (or a single value) into an increasing grid."""
    if ":" not in spec:
        return (float(spec),)
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValueError(f"pi grid must be lo:hi:step, got {spec!r}")
    lo, hi, step = (float(p) for p in parts)
    if step <= 0 or lo > hi:
        raise ValueError(f"bad pi grid {spec!r}")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return tuple(round(lo + i * step, 10) for i in range(n))


def write_pgm(path, normalized: np.ndarray):
    """Write a [0,1] map as a binary P5 PGM with maxval 255."""
    h, w = normalized.shape
    quantized = np.clip(
        np.floor(normalized.astype(np.float64) * 255.999), 0, 255
    ).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(quantized.tobytes())


def _fmt(v: float) -> str:
    return format(float(v), ".6g")


def _load_model(args) -> Model:
    log.info("loading model %s", args.model)
    return load_model_file(args.model)


def _load_dataset(model: Model, images_path, labels_path) -> Dataset:
    images = Path(images_path).read_bytes()
    if labels_path is None:
        # unlabeled use (predict/attribute with --class): zero-fill the labels
        count = load_idx_images(images).shape[0]
        labels = save_idx_labels(np.zeros(count, dtype=np.uint8))
    else:
        labels = Path(labels_path).read_bytes()
    return load_mnist_idx(images, labels, model.normalization)


def _reference_image(model: Model, spec: str) -> np.ndarray:
    kind, seed = parse_reference(spec)
    return make_reference(kind, model.input_shape, model.normalization, seed=seed)


def cmd_predict(args) -> int:
    model = _load_model(args)
    dataset = _load_dataset(model, args.images, args.labels)
    image = dataset.images[args.index]
    cls, probs = predict(model, image)
    print(f"class {cls}")
    print("probs " + " ".join(_fmt(p) for p in probs))
    return 0


def cmd_attribute(args) -> int:
    model = _load_model(args)
    dataset = _load_dataset(model, args.images, args.labels)
    image = dataset.images[args.index]
    if args.class_index is not None:
        class_index = args.class_index
    elif args.labels is not None:
        class_index = int(dataset.labels[args.index])
    else:
        raise ValueError("attribute needs --class or --labels for the target class")

    reference = _reference_image(model, args.reference)
    config = EstimatorConfig(epsilon=args.epsilon)
    rng = np.random.default_rng((args.seed, args.index))
    trace = forward_with_trace(model, image)
    ref_trace = forward_with_trace(model, reference)
    smap = compute_saliency(
        args.method,
        model,
        image,
        class_index,
        reference=reference,
        ref_trace=ref_trace,
        trace=trace,
        config=config,
        steps=args.ig_steps,
        rng=rng,
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(out / "saliency.pgm", smap.normalized)

    ranking = rank_pixels(smap)
    h, w = smap.normalized.shape
    with open(out / "ranking.csv", "w", newline="\n") as f:
        f.write("rank,row,col,score\n")
        flat_scores = smap.normalized.ravel()
        for rank, pos in enumerate(ranking):
            f.write(
                f"{rank},{pos // w},{pos % w},"
                f"{format(float(flat_scores[pos]), '.9g')}\n"
            )

    raw_sum = float(np.sum(smap.raw.astype(np.float64)))
    delta = ""
    ratio = ""
    if args.method == "afmi":
        gap = float(trace.logits[class_index]) - float(ref_trace.logits[class_index])
        delta = _fmt(gap)
        ratio = _fmt(raw_sum / gap) if gap != 0.0 else "nan"
    elif args.method == "ig":
        attr = ig_attributions(model, image, reference, class_index, args.ig_steps)
        raw_sum = float(np.sum(attr.astype(np.float64)))
        gap = float(trace.logits[class_index]) - float(ref_trace.logits[class_index])
        delta = _fmt(gap)
        ratio = _fmt(raw_sum / gap) if gap != 0.0 else "nan"
    with open(out / "completeness.csv", "w", newline="\n") as f:
        f.write("method,raw_sum,target_delta,completeness_ratio\n")
        f.write(f"{args.method},{_fmt(raw_sum)},{delta},{ratio}\n")
    log.info("attribution artifacts written to %s", out)
    return 0


def cmd_evaluate(args) -> int:
    model = _load_model(args)
    dataset = _load_dataset(model, args.images, args.labels)
    if args.count is not None:
        dataset = dataset.subset(range(min(args.count, len(dataset))))
    methods = []
    for chunk in args.method or ["afmi"]:
        methods.extend(m for m in chunk.split(",") if m)
    reference = _reference_image(model, args.reference)
    curves = evaluate(
        model,
        dataset,
        methods,
        parse_pi_grid(args.pi_grid),
        reference=reference,
        config=EstimatorConfig(epsilon=args.epsilon),
        steps=args.ig_steps,
        seed=args.seed,
        threads=args.threads,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_curves_csv(out / "curves.csv", curves)
    write_auc_csv(out / "auc.csv", curves)
    log.info("evaluation artifacts written to %s", out)
    return 0


def cmd_faithfulness(args) -> int:
    model = _load_model(args)
    train = _load_dataset(model, args.train_images, args.train_labels)
    val = _load_dataset(model, args.val_images, args.val_labels)
    if args.train_count is not None:
        train = train.subset(range(min(args.train_count, len(train))))
    if args.val_count is not None:
        val = val.subset(range(min(args.val_count, len(val))))
    reference = _reference_image(model, args.reference)
    config = EstimatorConfig(epsilon=args.epsilon)
    bank = build_prototypes(model, train, reference, config, threads=args.threads)
    report = faithfulness_report(
        model, train, val, reference, config, threads=args.threads
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_prototypes_csv(out / "prototypes.csv", bank)
    write_accuracy_csv(out / "accuracy.csv", report)
    print(
        f"faithfulness accuracy {_fmt(report.accuracy)} "
        f"({report.eligible_n}/{report.val_n} eligible)"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="afmi",
        description="Feature-map-importance attribution engine for small CNNs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model", required=True, help="AFW1 model container")
        p.add_argument("--epsilon", type=float, default=1e-7,
                       help="secant estimator fallback threshold")
        p.add_argument("--seed", type=int, default=0, help="global random seed")
        p.add_argument("--threads", type=int, default=1, help="worker thread count")
        p.add_argument("--reference", default="black",
                       help="reference input: black, white, or random:<seed>")
        p.add_argument("--ig-steps", type=int, default=100,
                       help="integration steps for the ig method")

    p = sub.add_parser("predict", help="classify one image")
    common(p)
    p.add_argument("--images", required=True, help="IDX image file")
    p.add_argument("--labels", help="IDX label file")
    p.add_argument("--index", type=int, default=0, help="image index")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("attribute", help="write saliency artifacts for one image")
    common(p)
    p.add_argument("--images", required=True, help="IDX image file")
    p.add_argument("--labels", help="IDX label file")
    p.add_argument("--index", type=int, default=0, help="image index")
    p.add_argument("--method", default="afmi", choices=METHODS)
    p.add_argument("--class", dest="class_index", type=int,
                   help="target class (defaults to the ground-truth label)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("evaluate", help="run the insertion protocol")
    common(p)
    p.add_argument("--images", required=True, help="IDX image file")
    p.add_argument("--labels", required=True, help="IDX label file")
    p.add_argument("--method", action="append",
                   help="method name, repeatable or comma-separated")
    p.add_argument("--pi-grid", default="0.05:1.0:0.05", help="grid as lo:hi:step")
    p.add_argument("--count", type=int, help="evaluate only the first N images")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("faithfulness", help="prototype classification accuracy")
    common(p)
    p.add_argument("--train-images", required=True)
    p.add_argument("--train-labels", required=True)
    p.add_argument("--val-images", required=True)
    p.add_argument("--val-labels", required=True)
    p.add_argument("--train-count", type=int, help="use only the first N train images")
    p.add_argument("--val-count", type=int, help="use only the first N val images")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_faithfulness)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ModelError, IdxFormatError, ShapeError, ValueError, OSError) as e:
        log.error("%s", e)
        print(f"afmi: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
