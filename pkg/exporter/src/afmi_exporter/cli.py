"""Full export pipeline: train, write AFW1, emit data subsets and goldens."""

import argparse
import json
import logging
import sys
from pathlib import Path

from .afw1 import state_dict_tensors, write_afw1
from .dataio import write_idx_images, write_idx_labels
from .fixtures import emit_fixtures
from .train import load_split, train_reference_model

log = logging.getLogger("afmi-exporter")

TRAIN_SUBSET = 2000
VAL_SUBSET = 1000
FIXTURE_COUNT = 100


def run_export(mnist_dir, out_dir, seed=0, epochs=3) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    model, summary = train_reference_model(mnist_dir, seed=seed, epochs=epochs)
    log.info("test accuracy %.4f", summary["test_accuracy"])

    afw_info = write_afw1(out / "mnist_cnn.afw1", state_dict_tensors(model))

    train_images, train_labels = load_split(mnist_dir, "train")
    test_images, test_labels = load_split(mnist_dir, "test")
    write_idx_images(out / "train2000-images-idx3-ubyte", train_images[:TRAIN_SUBSET])
    write_idx_labels(out / "train2000-labels-idx1-ubyte", train_labels[:TRAIN_SUBSET])
    write_idx_images(out / "val1000-images-idx3-ubyte", test_images[:VAL_SUBSET])
    write_idx_labels(out / "val1000-labels-idx1-ubyte", test_labels[:VAL_SUBSET])

    fixture_entries = emit_fixtures(
        model, test_images, test_labels, out, n=FIXTURE_COUNT
    )

    manifest = {
        "training": summary,
        "payload_bytes": afw_info["payload_bytes"],
        "payload_sha256": afw_info["payload_sha256"],
        "architecture": afw_info["architecture"],
        "subsets": {
            "train2000": "first 2000 images of the MNIST training split",
            "val1000": "first 1000 images of the MNIST test split",
            f"fixtures{FIXTURE_COUNT}": (
                f"first {FIXTURE_COUNT} images of the MNIST test split, "
                "with golden logits"
            ),
        },
        "fixtures": fixture_entries,
    }
    with open(out / "export_manifest.json", "w", newline="\n") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="afmi-exporter: %(message)s")
    parser = argparse.ArgumentParser(
        prog="afmi-export",
        description="Train the reference MNIST CNN and export AFW1 fixtures",
    )
    parser.add_argument("--mnist-dir", required=True,
                        help="directory holding the four MNIST IDX files")
    parser.add_argument("--out", required=True, help="output fixture directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=3)
    args = parser.parse_args(argv)
    manifest = run_export(args.mnist_dir, args.out, seed=args.seed, epochs=args.epochs)
    acc = manifest["training"]["test_accuracy"]
    print(f"exported; test accuracy {acc:.4f}")
    if args.epochs > 0 and acc < 0.97:
        print("warning: accuracy below the 0.97 bar", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
