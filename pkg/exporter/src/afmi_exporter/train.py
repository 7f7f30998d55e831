"""Deterministic training of the reference CNN on MNIST."""

import logging

import numpy as np
import torch
import torch.nn.functional as F
from torch.optim.lr_scheduler import StepLR

from .dataio import normalize_images, read_idx_images, read_idx_labels
from .net import Net

log = logging.getLogger("afmi-exporter")


def load_split(mnist_dir, split: str):
    prefix = "train" if split == "train" else "t10k"
    images = read_idx_images(f"{mnist_dir}/{prefix}-images-idx3-ubyte")
    labels = read_idx_labels(f"{mnist_dir}/{prefix}-labels-idx1-ubyte")
    return images, labels


def evaluate_accuracy(model, images: np.ndarray, labels: np.ndarray, batch=500) -> float:
    model.eval()
    x = torch.from_numpy(normalize_images(images))
    y = torch.from_numpy(labels.astype(np.int64))
    correct = 0
    with torch.no_grad():
        for i in range(0, len(x), batch):
            pred = model.logits(x[i : i + batch]).argmax(dim=1)
            correct += int((pred == y[i : i + batch]).sum())
    return correct / len(x)


def train_reference_model(
    mnist_dir,
    seed: int = 0,
    epochs: int = 3,
    batch_size: int = 64,
    lr: float = 1.0,
    gamma: float = 0.7,
    limit: int | None = None,
) -> tuple[Net, dict]:
    """Train the reference CNN; returns (model, training summary).

    Fully seeded: parameter init, batch shuffling, and dropout all derive from
    ``seed``, and deterministic kernels are enforced, so repeated runs produce
    byte-identical weights. ``limit`` caps both splits (used by quick tests).
    """
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)

    train_images, train_labels = load_split(mnist_dir, "train")
    test_images, test_labels = load_split(mnist_dir, "test")
    if limit is not None:
        train_images, train_labels = train_images[:limit], train_labels[:limit]
        test_images, test_labels = test_images[:limit], test_labels[:limit]

    model = Net()
    optimizer = torch.optim.Adadelta(model.parameters(), lr=lr)
    scheduler = StepLR(optimizer, step_size=1, gamma=gamma)

    x_all = torch.from_numpy(normalize_images(train_images))
    y_all = torch.from_numpy(train_labels.astype(np.int64))
    n = len(x_all)
    shuffle_rng = torch.Generator().manual_seed(seed)

    for epoch in range(epochs):
        model.train()
        order = torch.randperm(n, generator=shuffle_rng)
        total_loss = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            optimizer.zero_grad()
            output = model(x_all[idx])
            loss = F.nll_loss(output, y_all[idx])
            loss.backward()
            optimizer.step()
            total_loss += float(loss.detach()) * len(idx)
        scheduler.step()
        log.info("epoch %d mean loss %.4f", epoch + 1, total_loss / n)

    accuracy = evaluate_accuracy(model, test_images, test_labels) if epochs >= 0 else 0.0
    summary = {
        "seed": seed,
        "epochs": epochs,
        "batch_size": batch_size,
        "optimizer": "adadelta",
        "lr": lr,
        "lr_gamma_per_epoch": gamma,
        "train_n": int(n),
        "test_n": int(len(test_images)),
        "test_accuracy": accuracy,
    }
    return model, summary
