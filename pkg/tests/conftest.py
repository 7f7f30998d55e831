import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, os.path.dirname(__file__))

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURE_DIR = REPO_ROOT / "fixtures"

MNIST_MODEL = FIXTURE_DIR / "mnist_cnn.afw1"

needs_fixtures = pytest.mark.skipif(
    not MNIST_MODEL.exists(),
    reason="committed MNIST fixtures not present (run the exporter first)",
)


@pytest.fixture(scope="session")
def fixture_dir():
    return FIXTURE_DIR


@pytest.fixture(scope="session")
def mnist_model():
    from afmi.model import load_model_file

    if not MNIST_MODEL.exists():
        pytest.skip("committed MNIST model not present")
    return load_model_file(MNIST_MODEL)


@pytest.fixture(scope="session")
def mnist_val(mnist_model):
    from afmi.data import load_mnist_idx

    images = (FIXTURE_DIR / "val1000-images-idx3-ubyte").read_bytes()
    labels = (FIXTURE_DIR / "val1000-labels-idx1-ubyte").read_bytes()
    return load_mnist_idx(images, labels, mnist_model.normalization)


@pytest.fixture(scope="session")
def mnist_train(mnist_model):
    from afmi.data import load_mnist_idx

    images = (FIXTURE_DIR / "train2000-images-idx3-ubyte").read_bytes()
    labels = (FIXTURE_DIR / "train2000-labels-idx1-ubyte").read_bytes()
    return load_mnist_idx(images, labels, mnist_model.normalization)


@pytest.fixture(scope="session")
def golden_logits():
    """Rows of golden_logits.csv as (index, label, logits) tuples."""
    import numpy as np

    path = FIXTURE_DIR / "golden_logits.csv"
    if not path.exists():
        pytest.skip("golden logits fixture not present")
    rows = []
    with open(path) as f:
        next(f)  # header
        for line in f:
            parts = line.strip().split(",")
            rows.append(
                (
                    int(parts[0]),
                    int(parts[1]),
                    np.array([float(v) for v in parts[2:]], dtype=np.float64),
                )
            )
    return rows
