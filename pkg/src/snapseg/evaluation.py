"""Confusion matrices, accuracy metrics, and label-budget sweeps.

Unlabeled ground truth is skipped when tallying. A class with neither true
nor predicted samples is reported absent and excluded from the averaged F
score rather than dragging it to zero.
"""

import dataclasses

import numpy as np

from .scene_io import UNLABELED
from .svm import LinearSvm, build_weak_training_set
from .validation import check_features, check_labels


@dataclasses.dataclass(frozen=True)
class ConfusionMatrix:
    """counts[i, j] = points of true class i predicted as class j."""

    counts: np.ndarray

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())


def confusion(true_labels, predicted, n_classes):
    true = check_labels(true_labels, allow_unlabeled=True)
    pred = check_labels(predicted, n=true.shape[0], n_classes=n_classes)
    keep = true != UNLABELED
    if true[keep].size and true[keep].max() >= n_classes:
        raise ValueError(
            f"true label {int(true[keep].max())} outside [0, {n_classes})"
        )
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (true[keep], pred[keep]), 1)
    return ConfusionMatrix(counts)


@dataclasses.dataclass(frozen=True)
class MetricsReport:
    overall_accuracy: float
    precision: np.ndarray  # nan where undefined
    recall: np.ndarray
    f_score: np.ndarray  # nan only for absent classes
    present: np.ndarray  # bool per class
    average_f: float
    matrix: ConfusionMatrix


def metrics(cm):
    """Overall accuracy plus per-class precision/recall/F from a matrix.

    F is 0 when precision + recall is 0; classes absent from both axes
    get nan and are excluded from average_f.
    """
    counts = cm.counts
    total = counts.sum()
    if total == 0:
        raise ValueError("confusion matrix is empty")
    k = cm.n_classes
    tp = np.diag(counts).astype(np.float64)
    row = counts.sum(axis=1).astype(np.float64)  # true per class
    col = counts.sum(axis=0).astype(np.float64)  # predicted per class
    present = (row > 0) | (col > 0)
    precision = np.full(k, np.nan)
    recall = np.full(k, np.nan)
    f = np.full(k, np.nan)
    for c in range(k):
        if not present[c]:
            continue
        precision[c] = tp[c] / col[c] if col[c] > 0 else 0.0
        recall[c] = tp[c] / row[c] if row[c] > 0 else 0.0
        pr = precision[c] + recall[c]
        f[c] = 2.0 * precision[c] * recall[c] / pr if pr > 0 else 0.0
    return MetricsReport(
        overall_accuracy=float(tp.sum() / total),
        precision=precision,
        recall=recall,
        f_score=f,
        present=present,
        average_f=float(np.nanmean(f[present])) if present.any() else 0.0,
        matrix=cm,
    )


def overall_accuracy(true_labels, predicted, n_classes):
    return metrics(confusion(true_labels, predicted, n_classes)).overall_accuracy


@dataclasses.dataclass(frozen=True)
class SweepRow:
    fraction: float
    mean_oa: float
    std_oa: float
    per_seed_oa: tuple


def label_fraction_sweep(features, labels, fractions, seeds, n_classes,
                         eval_features=None, eval_labels=None, C=1.0,
                         epochs=200):
    """Train one classifier per (fraction, seed) on shared features.

    Features are extracted once by the caller and reused across the whole
    grid; only the label subset and classifier vary. Evaluation defaults
    to the full training pool when no held-out set is given.
    """
    x = check_features(features)
    y = check_labels(labels, n=x.shape[0], allow_unlabeled=True)
    if eval_features is None:
        eval_features, eval_labels = x, y
    else:
        eval_features = check_features(eval_features, dim=x.shape[1])
        eval_labels = check_labels(eval_labels, n=eval_features.shape[0],
                                   allow_unlabeled=True)
    rows = []
    for frac in fractions:
        oas = []
        for seed in seeds:
            weak = build_weak_training_set(
                x, y, label_fraction=frac, seed=seed, n_classes=n_classes
            )
            clf = LinearSvm(C=C, epochs=epochs, seed=seed, n_classes=n_classes)
            clf.fit(weak.features, weak.labels)
            pred = clf.predict(eval_features)
            oas.append(overall_accuracy(eval_labels, pred, n_classes))
        arr = np.asarray(oas)
        rows.append(SweepRow(
            fraction=float(frac),
            mean_oa=float(arr.mean()),
            std_oa=float(arr.std()),
            per_seed_oa=tuple(float(v) for v in arr),
        ))
    return rows


def metrics_to_csv(report, path, class_names=()):
    k = report.matrix.n_classes
    names = class_names or [f"class_{i}" for i in range(k)]
    with open(path, "w") as fh:
        fh.write("# snapseg-metrics v1: class,name,present,precision,recall,f_score\n")
        fh.write(f"# overall_accuracy {report.overall_accuracy:.6f}\n")
        fh.write(f"# average_f {report.average_f:.6f}\n")
        for c in range(k):
            if report.present[c]:
                fh.write(
                    f"{c},{names[c]},1,{report.precision[c]:.6f},"
                    f"{report.recall[c]:.6f},{report.f_score[c]:.6f}\n"
                )
            else:
                fh.write(f"{c},{names[c]},0,,,\n")


def metrics_to_text(report, class_names=()):
    k = report.matrix.n_classes
    names = class_names or [f"class_{i}" for i in range(k)]
    width = max(len(n) for n in names)
    lines = [
        f"overall accuracy {report.overall_accuracy:.4f}",
        f"average F        {report.average_f:.4f}",
        f"{'class'.ljust(width)}  precision  recall     F",
    ]
    for c in range(k):
        if report.present[c]:
            lines.append(
                f"{names[c].ljust(width)}  {report.precision[c]:9.4f}  "
                f"{report.recall[c]:9.4f}  {report.f_score[c]:9.4f}"
            )
        else:
            lines.append(f"{names[c].ljust(width)}  {'absent':>9}")
    return "\n".join(lines) + "\n"


def sweep_to_csv(rows, path):
    with open(path, "w") as fh:
        fh.write("# snapseg-sweep v1: fraction,mean_oa,std_oa,per_seed\n")
        for r in rows:
            per_seed = " ".join(f"{v:.6f}" for v in r.per_seed_oa)
            fh.write(f"{r.fraction:g},{r.mean_oa:.6f},{r.std_oa:.6f},{per_seed}\n")


def purity_to_csv(report, path, class_names=()):
    names = class_names or [f"class_{i}" for i in range(report.n_classes)]
    with open(path, "w") as fh:
        fh.write("# snapseg-purity v1: class,name,present,mean_count,mean_purity,std_purity\n")
        fh.write(
            f"# overall {report.overall_mean:.6f} {report.overall_std:.6f}\n"
        )
        for c in range(report.n_classes):
            if report.present[c]:
                fh.write(
                    f"{c},{names[c]},1,{report.mean_counts[c]:.2f},"
                    f"{report.mean_purity[c]:.6f},{report.std_purity[c]:.6f}\n"
                )
            else:
                fh.write(f"{c},{names[c]},0,0.00,,\n")
