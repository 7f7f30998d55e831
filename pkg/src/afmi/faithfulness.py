"""Faithfulness measurement via feature-map-importance prototypes.

Each image's per-feature-map importance scores for its ground-truth class form
a compact representation of that image. Averaging them over training images
gives one prototype vector per class; a validation image is then classified by
cosine similarity to the prototypes. The fraction of correctly prototype-
classified images (among images the CNN itself predicts correctly) measures
how faithfully the importance scores encode what the network actually uses.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .attribution import DEFAULT_CONFIG, EstimatorConfig, fmi
from .data import Dataset
from .model import Model, forward_with_trace, make_reference

__all__ = [
    "PrototypeBank",
    "FaithfulnessReport",
    "build_prototypes",
    "classify_by_fmi",
    "faithfulness_report",
    "faithfulness_accuracy",
    "FmiPrototypeClassifier",
    "write_prototypes_csv",
    "write_accuracy_csv",
]


@dataclass(frozen=True)
class PrototypeBank:
    """Per-class mean importance vectors [C,K] with contributing counts."""

    prototypes: np.ndarray
    counts: np.ndarray
    skipped_zero: int = 0

    @property
    def class_count(self) -> int:
        return self.prototypes.shape[0]


@dataclass(frozen=True)
class FaithfulnessReport:
    train_n: int
    val_n: int
    eligible_n: int
    accuracy: float


def _fmi_scores(model, trace, ref_trace, label, config):
    return fmi(trace, ref_trace, label, config).scores.astype(np.float64)


def _map_ordered(job, indices, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(job, indices))
    return [job(i) for i in indices]


def build_prototypes(
    model: Model,
    train_dataset: Dataset,
    reference: np.ndarray | None = None,
    config: EstimatorConfig = DEFAULT_CONFIG,
    threads: int = 1,
) -> PrototypeBank:
    """Average each training image's importance vector into its class prototype.

    Every class must contribute at least one image. All-zero importance
    vectors (possible when no path from the feature maps to a logit is
    active) are excluded from the averages and counted in ``skipped_zero``.
    """
    if len(train_dataset) == 0:
        raise ValueError("empty training dataset")
    if reference is None:
        reference = make_reference("black", model.input_shape, model.normalization)
    ref_trace = forward_with_trace(model, reference)
    k = int(model.feature_map_shape[0])

    def job(i):
        trace = forward_with_trace(model, train_dataset.images[i])
        return _fmi_scores(
            model, trace, ref_trace, int(train_dataset.labels[i]), config
        )

    vectors = _map_ordered(job, range(len(train_dataset)), threads)

    sums = np.zeros((model.class_count, k), dtype=np.float64)
    counts = np.zeros(model.class_count, dtype=np.int64)
    skipped = 0
    for i, vec in enumerate(vectors):
        if not np.any(vec):
            skipped += 1
            continue
        label = int(train_dataset.labels[i])
        sums[label] += vec
        counts[label] += 1
    missing = np.nonzero(counts == 0)[0]
    if missing.size:
        raise ValueError(f"no training images contribute to classes {missing.tolist()}")
    prototypes = (sums / counts[:, None]).astype(np.float32)
    return PrototypeBank(prototypes=prototypes, counts=counts, skipped_zero=skipped)


def _cosine_row(vec: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    """Cosine similarity of one vector against each prototype; -inf on zero norms."""
    v = vec.astype(np.float64)
    p = prototypes.astype(np.float64)
    v_norm = float(np.linalg.norm(v))
    p_norms = np.linalg.norm(p, axis=1)
    sims = np.full(p.shape[0], -np.inf)
    if v_norm == 0.0:
        return sims
    ok = p_norms > 0.0
    sims[ok] = (p[ok] @ v) / (p_norms[ok] * v_norm)
    return sims


def classify_by_fmi(scores, bank: PrototypeBank) -> int:
    """Most cosine-similar prototype's class; ties and all-zero cases go low."""
    vec = np.asarray(
        scores.scores if hasattr(scores, "scores") else scores, dtype=np.float64
    )
    if vec.shape != (bank.prototypes.shape[1],):
        raise ValueError(
            f"score vector shape {vec.shape} does not match prototypes "
            f"{bank.prototypes.shape}"
        )
    sims = _cosine_row(vec, bank.prototypes)
    if not np.any(np.isfinite(sims)):
        return 0
    return int(np.argmax(sims))


def faithfulness_report(
    model: Model,
    train_dataset: Dataset,
    val_dataset: Dataset,
    reference: np.ndarray | None = None,
    config: EstimatorConfig = DEFAULT_CONFIG,
    threads: int = 1,
) -> FaithfulnessReport:
    """Prototype-classification accuracy over correctly predicted validation images.

    Each validation image's importance vector is computed for its ground-truth
    class; images the model itself misclassifies are excluded.
    """
    if reference is None:
        reference = make_reference("black", model.input_shape, model.normalization)
    bank = build_prototypes(model, train_dataset, reference, config, threads)
    ref_trace = forward_with_trace(model, reference)

    def job(i):
        image = val_dataset.images[i]
        label = int(val_dataset.labels[i])
        trace = forward_with_trace(model, image)
        predicted = int(np.argmax(trace.logits))
        if predicted != label:
            return None
        vec = _fmi_scores(model, trace, ref_trace, label, config)
        return classify_by_fmi(vec, bank) == label

    results = _map_ordered(job, range(len(val_dataset)), threads)
    eligible = [r for r in results if r is not None]
    if not eligible:
        raise ValueError("no correctly predicted validation images to score")
    accuracy = float(np.sum(eligible)) / len(eligible)
    return FaithfulnessReport(
        train_n=len(train_dataset),
        val_n=len(val_dataset),
        eligible_n=len(eligible),
        accuracy=accuracy,
    )


def faithfulness_accuracy(
    model: Model,
    train_dataset: Dataset,
    val_dataset: Dataset,
    reference: np.ndarray | None = None,
    config: EstimatorConfig = DEFAULT_CONFIG,
    threads: int = 1,
) -> float:
    return faithfulness_report(
        model, train_dataset, val_dataset, reference, config, threads
    ).accuracy


class FmiPrototypeClassifier(BaseEstimator, ClassifierMixin):
    """Nearest-prototype classifier over precomputed importance vectors.

    A scikit-learn estimator: ``fit`` averages the rows of X per class into
    prototypes, ``predict`` assigns each row to the most cosine-similar one.
    Useful for composing the faithfulness measurement with the usual
    cross-validation and pipeline tooling.
    """

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        prototypes = np.zeros((len(self.classes_), X.shape[1]), dtype=np.float64)
        for idx in range(len(self.classes_)):
            rows = X[encoded == idx]
            prototypes[idx] = rows.mean(axis=0)
        self.prototypes_ = prototypes
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "prototypes_")
        X = check_array(X)
        out = np.empty(X.shape[0], dtype=self.classes_.dtype)
        for i, row in enumerate(X):
            sims = _cosine_row(row, self.prototypes_)
            idx = int(np.argmax(sims)) if np.any(np.isfinite(sims)) else 0
            out[i] = self.classes_[idx]
        return out


def write_prototypes_csv(path, bank: PrototypeBank):
    """Write ``class,k,value`` rows for every prototype entry."""
    with open(path, "w", newline="\n") as f:
        f.write("class,k,value\n")
        for c in range(bank.prototypes.shape[0]):
            for k in range(bank.prototypes.shape[1]):
                f.write(f"{c},{k},{format(float(bank.prototypes[c, k]), '.9g')}\n")


def write_accuracy_csv(path, report: FaithfulnessReport):
    """Write the one-line ``train_n,val_n,eligible_n,accuracy`` report."""
    with open(path, "w", newline="\n") as f:
        f.write("train_n,val_n,eligible_n,accuracy\n")
        f.write(
            f"{report.train_n},{report.val_n},{report.eligible_n},"
            f"{format(report.accuracy, '.6g')}\n"
        )
