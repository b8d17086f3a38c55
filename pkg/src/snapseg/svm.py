"""One-vs-rest linear SVM trained by epoch-shuffled subgradient descent.

The schedule is the classic 1/(lambda * t) step with lambda = 1 / (C * n),
applied per sample. Rows for classes absent from the training set are left
at zero and are only ever predicted through the smallest-id tie rule, which
also means a degenerate C -> 0 drives all weights to zero and every
prediction to class 0.
"""

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .scene_io import UNLABELED
from .validation import as_rng, check_features, check_labels


class LinearSvm(BaseEstimator, ClassifierMixin):
    """L2-regularized hinge classifier, one binary problem per class.

    n_classes fixes the weight matrix height; when None it is inferred
    as max(y) + 1 at fit time.
    """

    def __init__(self, C=1.0, epochs=200, seed=0, n_classes=None):
        self.C = C
        self.epochs = epochs
        self.seed = seed
        self.n_classes = n_classes

    def fit(self, X, y):
        x = check_features(X)
        n = x.shape[0]
        labels = check_labels(y, n=n)
        if labels.size == 0:
            raise ValueError("empty training set")
        k = int(self.n_classes) if self.n_classes else int(labels.max()) + 1
        if labels.max() >= k:
            raise ValueError(
                f"label {int(labels.max())} outside [0, {k})"
            )
        present = np.unique(labels)
        if present.size < 2:
            raise ValueError(
                f"training set contains only class {int(present[0])}; "
                "at least 2 classes are required"
            )
        if float(self.C) <= 0:
            raise ValueError("C must be > 0")
        dim = x.shape[1]
        w = np.zeros((k, dim))
        b = np.zeros(k)
        lam = 1.0 / (float(self.C) * n)
        targets = np.full((n, k), -1.0)
        targets[np.arange(n), labels] = 1.0
        rng = as_rng(self.seed)
        # the last iterate of 1/(lambda*t) subgradient descent oscillates
        # when lambda is small; the tail average over the final epoch is
        # the reported solution
        w_sum = np.zeros_like(w)
        b_sum = np.zeros_like(b)
        t = 0
        n_epochs = int(self.epochs)
        for epoch in range(n_epochs):
            order = rng.permutation(n)
            last = epoch == n_epochs - 1
            for i in order:
                t += 1
                eta = 1.0 / (lam * t)
                xi = x[i]
                scores = w[present] @ xi + b[present]
                tgt = targets[i, present]
                violated = tgt * scores < 1.0
                w[present] *= 1.0 - eta * lam
                if violated.any():
                    rows = present[violated]
                    w[rows] += eta * tgt[violated][:, None] * xi
                    b[rows] += eta * tgt[violated]
                if last:
                    w_sum += w
                    b_sum += b
        self.weights_ = w_sum / n
        self.biases_ = b_sum / n
        self.classes_seen_ = present
        self.n_classes_ = k
        return self

    def _require_fit(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError("LinearSvm instance is not fitted yet")

    def decision_function(self, X):
        self._require_fit()
        x = check_features(X, dim=self.weights_.shape[1])
        return x @ self.weights_.T + self.biases_

    def predict(self, X):
        """Highest score wins; exact ties go to the smallest class id."""
        return self.decision_function(X).argmax(axis=1)


def save_svm(model, path):
    model._require_fit()
    with open(path, "w") as fh:
        fh.write(f"n_classes {int(model.n_classes_)}\n")
        fh.write(f"dim {model.weights_.shape[1]}\n")
        fh.write(f"C {repr(float(model.C))}\n")
        fh.write(f"seed {int(model.seed)}\n")
        for row in model.weights_:
            fh.write("w " + " ".join(repr(float(v)) for v in row) + "\n")
        fh.write("b " + " ".join(repr(float(v)) for v in model.biases_) + "\n")


def load_svm(path):
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    try:
        k = int(lines[0].split()[1])
        dim = int(lines[1].split()[1])
        c = float(lines[2].split()[1])
        seed = int(lines[3].split()[1])
        rows = [ln.split()[1:] for ln in lines[4 : 4 + k]]
        w = np.array([[float(v) for v in row] for row in rows]).reshape(k, dim)
        b = np.array([float(v) for v in lines[4 + k].split()[1:]])
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed svm file: {exc}") from exc
    model = LinearSvm(C=c, seed=seed, n_classes=k)
    model.weights_ = w
    model.biases_ = b
    model.n_classes_ = k
    model.classes_seen_ = np.flatnonzero(np.abs(w).sum(axis=1) > 0)
    return model


@dataclasses.dataclass(frozen=True)
class WeakTrainingSet:
    """Selected features/labels plus a per-sample provenance manifest."""

    features: np.ndarray
    labels: np.ndarray
    sample_indices: np.ndarray
    sources: tuple  # "true" or "pseudo" per selected sample


def build_weak_training_set(features, true_labels, *, label_fraction=None,
                            labels_per_class=None, pseudo=None, seed=0,
                            n_classes=None):
    """Assemble the weakly supervised training set.

    Exactly one of label_fraction / labels_per_class chooses the true-label
    budget: a uniform fraction of all labeled samples, or a per-class count
    (short classes contribute what they have). Pseudo-labeled samples are
    appended afterwards; a sample that already carries a true label keeps
    it.
    """
    x = check_features(features)
    labels = check_labels(true_labels, n=x.shape[0], allow_unlabeled=True)
    if (label_fraction is None) == (labels_per_class is None):
        raise ValueError(
            "exactly one of label_fraction / labels_per_class must be given"
        )
    rng = as_rng(seed)
    pool = np.flatnonzero(labels != UNLABELED)
    if pool.size == 0:
        raise ValueError("no labeled samples to draw from")
    if label_fraction is not None:
        if not (0.0 < label_fraction <= 1.0):
            raise ValueError("label_fraction must lie in (0, 1]")
        n_take = max(1, int(round(label_fraction * pool.size)))
        chosen = np.sort(rng.choice(pool, size=n_take, replace=False))
    else:
        if labels_per_class < 1:
            raise ValueError("labels_per_class must be >= 1")
        k = int(n_classes) if n_classes else int(labels[pool].max()) + 1
        parts = []
        for c in range(k):
            members = pool[labels[pool] == c]
            if members.size == 0:
                continue
            take = min(int(labels_per_class), members.size)
            parts.append(rng.choice(members, size=take, replace=False))
        chosen = np.sort(np.concatenate(parts))
    idx = list(chosen)
    lab = list(labels[chosen])
    src = ["true"] * len(idx)
    if pseudo is not None and len(pseudo):
        have = set(int(i) for i in chosen)
        for i in range(len(pseudo)):
            si = int(pseudo.sample_indices[i])
            if si in have:
                continue  # a true label wins over a pseudo label
            idx.append(si)
            lab.append(int(pseudo.class_ids[i]))
            src.append("pseudo")
    order = np.asarray(idx, dtype=np.int64)
    return WeakTrainingSet(
        features=x[order],
        labels=np.asarray(lab, dtype=np.int64),
        sample_indices=order,
        sources=tuple(src),
    )


def save_manifest(path, weak_set):
    with open(path, "w") as fh:
        fh.write("# snapseg-manifest v1: sample_id,label,source\n")
        for i in range(weak_set.labels.shape[0]):
            fh.write(
                f"{int(weak_set.sample_indices[i])},"
                f"{int(weak_set.labels[i])},{weak_set.sources[i]}\n"
            )
