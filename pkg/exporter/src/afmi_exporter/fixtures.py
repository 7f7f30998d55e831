"""Fixture bundle emission: IDX subsets plus golden logits for cross-validation."""

import copy

import numpy as np
import torch

from .dataio import normalize_images, write_idx_images, write_idx_labels


def golden_logits(model, images: np.ndarray, batch=100) -> np.ndarray:
    """Final-linear-layer outputs (pre-softmax) for raw uint8 images.

    Evaluated in float64 on the float32-quantized normalized inputs: the
    float32 weights are exact in double, so this pins the arithmetic the
    consuming engine (float64 accumulation) is expected to reproduce.
    """
    model64 = copy.deepcopy(model).double().eval()
    x = torch.from_numpy(normalize_images(images)).double()
    outs = []
    with torch.no_grad():
        for i in range(0, len(x), batch):
            outs.append(model64.logits(x[i : i + batch]).numpy())
    return np.concatenate(outs, axis=0)


def write_golden_csv(path, labels: np.ndarray, logits: np.ndarray):
    with open(path, "w", newline="\n") as f:
        cols = ",".join(f"logit_{i}" for i in range(logits.shape[1]))
        f.write(f"index,label,{cols}\n")
        for i in range(len(labels)):
            row = ",".join(format(v, ".6g") for v in logits[i])
            f.write(f"{i},{int(labels[i])},{row}\n")


def emit_fixtures(model, images: np.ndarray, labels: np.ndarray, out_dir, n=100):
    """Write the n-image fixture bundle; returns the per-image manifest entries."""
    subset_images = images[:n]
    subset_labels = labels[:n]
    write_idx_images(f"{out_dir}/fixtures{n}-images-idx3-ubyte", subset_images)
    write_idx_labels(f"{out_dir}/fixtures{n}-labels-idx1-ubyte", subset_labels)
    logits = golden_logits(model, subset_images)
    write_golden_csv(f"{out_dir}/golden_logits.csv", subset_labels, logits)
    return [
        {
            "index": i,
            "label": int(subset_labels[i]),
            "golden_class": int(np.argmax(logits[i])),
        }
        for i in range(len(subset_labels))
    ]
