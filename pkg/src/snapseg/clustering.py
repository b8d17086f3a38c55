"""KMeans clustering and cluster-confidence pseudo-labels.

Distances are computed exactly, (x - c)^2 summed per coordinate, rather
than via the expanded-square shortcut, so constructed equidistance ties
resolve by index instead of by rounding noise. At desk scale the cost
difference is irrelevant.
"""

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .validation import as_rng, check_features, check_labels

_CHUNK = 2048


def _dists_sq(x, centers):
    """Exact squared distances, chunked over rows: (n, k)."""
    n = x.shape[0]
    out = np.empty((n, centers.shape[0]))
    for at in range(0, n, _CHUNK):
        diff = x[at : at + _CHUNK, None, :] - centers[None, :, :]
        out[at : at + _CHUNK] = (diff * diff).sum(axis=2)
    return out


class KMeans(BaseEstimator):
    """Lloyd's algorithm with distance-squared (kmeans++) seeding.

    Fitted attributes: centers_, labels_, inertia_, inertia_trace_ (one
    entry per assignment step, nonincreasing), n_iters_run_. Assignment
    ties go to the smallest center id; an empty cluster is repaired by
    re-seeding its center at the point farthest from its assigned center.
    """

    def __init__(self, n_clusters=300, seed=0, max_iters=100, tol=1e-6):
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iters = max_iters
        self.tol = tol

    def _seed_centers(self, x, rng):
        n = x.shape[0]
        k = int(self.n_clusters)
        centers = np.empty((k, x.shape[1]))
        first = int(rng.integers(n))
        centers[0] = x[first]
        d2 = ((x - centers[0]) ** 2).sum(axis=1)
        for ci in range(1, k):
            total = d2.sum()
            if total > 0:
                probs = d2 / total
                pick = int(rng.choice(n, p=probs))
            else:
                # every point duplicates a chosen center; take the first
                # index not yet used so seeding stays deterministic
                used = {int(np.flatnonzero((x == c).all(axis=1))[0])
                        for c in centers[:ci]}
                pick = next((i for i in range(n) if i not in used), 0)
            centers[ci] = x[pick]
            d2 = np.minimum(d2, ((x - centers[ci]) ** 2).sum(axis=1))
        return centers

    def fit(self, X):
        x = check_features(X)
        k = int(self.n_clusters)
        if k < 1:
            raise ValueError("n_clusters must be >= 1")
        if x.shape[0] < k:
            raise ValueError(
                f"{x.shape[0]} samples cannot fill {k} clusters"
            )
        rng = as_rng(self.seed)
        centers = self._seed_centers(x, rng)
        trace = []
        labels = None
        for it in range(int(self.max_iters)):
            d2 = _dists_sq(x, centers)
            new_labels = d2.argmin(axis=1)
            inertia = float(d2[np.arange(x.shape[0]), new_labels].sum())
            trace.append(inertia)
            if labels is not None and np.array_equal(new_labels, labels):
                labels = new_labels
                break
            labels = new_labels
            old = centers.copy()
            counts = np.bincount(labels, minlength=k)
            for ci in range(k):
                if counts[ci] > 0:
                    centers[ci] = x[labels == ci].mean(axis=0)
            empties = np.flatnonzero(counts == 0)
            if empties.size:
                dist_own = ((x - centers[labels]) ** 2).sum(axis=1)
                order = np.argsort(dist_own, kind="stable")[::-1]
                taken = 0
                for ci in empties:
                    centers[ci] = x[order[taken]]
                    taken += 1
                continue  # re-assign before testing convergence
            shift = np.sqrt(((centers - old) ** 2).sum(axis=1)).max()
            if shift < float(self.tol):
                break
        self.centers_ = centers
        self.labels_ = labels
        self.inertia_ = trace[-1]
        self.inertia_trace_ = trace
        self.n_iters_run_ = len(trace)
        return self

    def _require_fit(self):
        if not hasattr(self, "centers_"):
            raise NotFittedError("KMeans instance is not fitted yet")

    def predict(self, X):
        """Nearest-center ids; exact distance ties go to the smaller id."""
        self._require_fit()
        x = check_features(X, dim=self.centers_.shape[1])
        return _dists_sq(x, self.centers_).argmin(axis=1)

    def transform(self, X):
        """Distances (not squared) to every center."""
        self._require_fit()
        x = check_features(X, dim=self.centers_.shape[1])
        return np.sqrt(_dists_sq(x, self.centers_))


def assign(model, features):
    return model.predict(features)


def select_random_clusters(n_clusters, m, seed=0):
    """m distinct cluster ids, uniform without replacement, sorted."""
    if not (1 <= m <= n_clusters):
        raise ValueError(f"m={m} out of range [1, {n_clusters}]")
    rng = as_rng(seed)
    return np.sort(rng.choice(n_clusters, size=m, replace=False))


def label_cluster_centers(model, features, true_labels, cluster_ids):
    """Ground-truth label of the member nearest each requested center.

    Models one annotation per cluster: the most central member is looked
    up and its label stands for the whole cluster. Distance ties go to the
    smaller sample index. Errors on a cluster with no members.
    """
    model._require_fit()
    x = check_features(features, dim=model.centers_.shape[1])
    labels = check_labels(true_labels, n=x.shape[0])
    assignments = model.predict(x)
    out = {}
    for ci in np.asarray(cluster_ids, dtype=np.int64):
        members = np.flatnonzero(assignments == ci)
        if members.size == 0:
            raise ValueError(f"cluster {int(ci)} has no members to label")
        d = ((x[members] - model.centers_[ci]) ** 2).sum(axis=1)
        out[int(ci)] = int(labels[members[np.argmin(d)]])
    return out


@dataclasses.dataclass(frozen=True)
class PseudoLabelSet:
    """Admitted samples with their cluster-derived class labels."""

    sample_indices: np.ndarray
    class_ids: np.ndarray
    cluster_ids: np.ndarray
    normalized_distances: np.ndarray

    def __len__(self):
        return self.sample_indices.shape[0]


def cluster_pseudo_label(model, features, cluster_subset, center_labels,
                         threshold):
    """Admit cluster members whose center distance clears a threshold.

    A member's normalized distance is its distance to the center divided
    by the largest member distance in that cluster (0 when the cluster is
    a single repeated point). Members with normalized distance
    <= 1 - threshold are admitted and labeled with the cluster's center
    label. Higher thresholds admit fewer samples.
    """
    if not (0.0 <= threshold <= 1.0):
        raise ValueError("threshold must lie in [0, 1]")
    model._require_fit()
    x = check_features(features, dim=model.centers_.shape[1])
    assignments = model.predict(x)
    idx_parts, cls_parts, clu_parts, nd_parts = [], [], [], []
    for ci in np.asarray(cluster_subset, dtype=np.int64):
        if int(ci) not in center_labels:
            raise ValueError(f"cluster {int(ci)} has no center label")
        members = np.flatnonzero(assignments == ci)
        if members.size == 0:
            continue
        d = np.sqrt(((x[members] - model.centers_[ci]) ** 2).sum(axis=1))
        dmax = d.max()
        nd = d / dmax if dmax > 0 else np.zeros_like(d)
        keep = nd <= 1.0 - threshold
        idx_parts.append(members[keep])
        cls_parts.append(np.full(int(keep.sum()), center_labels[int(ci)],
                                 dtype=np.int64))
        clu_parts.append(np.full(int(keep.sum()), int(ci), dtype=np.int64))
        nd_parts.append(nd[keep])
    if idx_parts:
        return PseudoLabelSet(
            np.concatenate(idx_parts),
            np.concatenate(cls_parts),
            np.concatenate(clu_parts),
            np.concatenate(nd_parts),
        )
    return PseudoLabelSet(
        np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64),
        np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64),
    )


def save_pseudo_labels(path, pseudo):
    with open(path, "w") as fh:
        fh.write("# snapseg-pseudo-labels v1: sample_id,cluster_id,class_id,normalized_distance\n")
        for i in range(len(pseudo)):
            fh.write(
                f"{int(pseudo.sample_indices[i])},{int(pseudo.cluster_ids[i])},"
                f"{int(pseudo.class_ids[i])},{pseudo.normalized_distances[i]:.9f}\n"
            )


def save_kmeans(model, path):
    """ASCII persistence for a fitted KMeans model."""
    model._require_fit()
    with open(path, "w") as fh:
        fh.write(f"n_clusters {int(model.n_clusters)}\n")
        fh.write(f"dim {model.centers_.shape[1]}\n")
        fh.write(f"seed {int(model.seed)}\n")
        for row in model.centers_:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_kmeans(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    try:
        k = int(lines[0].split()[1])
        dim = int(lines[1].split()[1])
        seed = int(lines[2].split()[1])
        centers = np.array(
            [[float(v) for v in ln.split()] for ln in lines[3 : 3 + k]]
        ).reshape(k, dim)
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed kmeans file: {exc}") from exc
    model = KMeans(n_clusters=k, seed=seed)
    model.centers_ = centers
    model.labels_ = None
    model.inertia_ = float("nan")
    model.inertia_trace_ = []
    model.n_iters_run_ = 0
    return model
