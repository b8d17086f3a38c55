"""Point-wise segmentation by snapshot voting.

Each iteration captures a snapshot at an adaptively chosen field of view,
classifies its downsampled members, and casts one vote for the predicted
class on every point of the chosen view's presample. The loop stops once
the covered fraction reaches coverage_stop (or an iteration cap). Vote
resolution is a pure read of the table: per-point argmax, k-nearest-
neighbor arbitration for exact ties, and nearest-covered inheritance for
anything the loop never touched.
"""

import collections
import dataclasses

import numpy as np

from . import spatial_index
from .pairs import normalize_points
from .sampler import AdaptiveFovSelector, presample_variance
from .validation import as_rng, check_indices


@dataclasses.dataclass
class VoteTable:
    """Per-point, per-class vote counts."""

    counts: np.ndarray  # (N, n_classes) int64

    @classmethod
    def empty(cls, n_points, n_classes):
        if n_points < 1 or n_classes < 1:
            raise ValueError("vote table needs at least one point and class")
        return cls(np.zeros((n_points, n_classes), dtype=np.int64))

    @property
    def n_points(self):
        return self.counts.shape[0]

    @property
    def n_classes(self):
        return self.counts.shape[1]

    @property
    def total_votes(self):
        return int(self.counts.sum())

    def add_votes(self, indices, class_id):
        idx = check_indices(indices, self.n_points)
        if not (0 <= class_id < self.n_classes):
            raise ValueError(f"class id {class_id} out of range")
        self.counts[idx, int(class_id)] += 1

    def covered_mask(self):
        return self.counts.sum(axis=1) > 0

    def coverage(self):
        return float(self.covered_mask().mean())


class EncoderSvmClassifier:
    """Snapshot classifier: normalize, encode, score with a linear model.

    with_scale appends the normalization scale as one extra feature column
    (off by default, matching training-time extraction).
    """

    def __init__(self, encoder, svm, with_scale=False):
        self.encoder = encoder
        self.svm = svm
        self.with_scale = with_scale

    def predict_points(self, points):
        normalized, scale = normalize_points(points)
        feat = self.encoder.forward_features(normalized)[None, :]
        if self.with_scale:
            feat = np.concatenate([feat, [[scale]]], axis=1)
        return int(self.svm.predict(feat)[0])


@dataclasses.dataclass
class SegmentConfig:
    """Knobs for the capture-classify-vote loop."""

    K: int = 512
    fov_scales: tuple = (1.0, 2.0, 10.0)
    coverage_stop: float = 0.9995
    max_iters: int = None  # defaults to 200 * N / K
    warmup_min: int = 256
    refit_interval: int = 512
    knn_k: int = 5
    seed: int = 0


@dataclasses.dataclass
class SegmentationResult:
    labels: np.ndarray
    iterations: int
    coverage: float
    tie_resolutions: int
    uncovered_filled: int
    capture_log: list  # (iteration, anchor, fov_scale, predicted_class)


ResolveOutcome = collections.namedtuple(
    "ResolveOutcome", ["labels", "tie_resolutions", "uncovered_filled"]
)


def _nearest_covered(positions, uncovered_idx, covered_idx):
    """Index of the closest covered point for every uncovered one.

    Exact chunked distances; equidistant candidates resolve to the
    smallest point index.
    """
    cov = positions[covered_idx]
    out = np.empty(uncovered_idx.size, dtype=np.int64)
    step = max(1, 4_194_304 // covered_idx.size)
    for at in range(0, uncovered_idx.size, step):
        block = positions[uncovered_idx[at : at + step]]
        d2 = ((block[:, None, :] - cov[None, :, :]) ** 2).sum(axis=2)
        out[at : at + step] = covered_idx[d2.argmin(axis=1)]
    return out


def resolve_votes(table, tree, knn_k=5):
    """Turn a vote table into per-point labels without mutating it.

    Covered points take their argmax class. A point whose top count is
    shared by several classes asks its knn_k nearest neighbors (self
    excluded): the majority current label among covered neighbors casts
    one extra vote, then the argmax is taken again; a residual tie keeps
    the smallest class id. Uncovered points inherit the label of the
    nearest covered point.
    """
    counts = table.counts
    covered = table.covered_mask()
    if not covered.any():
        raise ValueError("cannot resolve an empty vote table")
    labels = counts.argmax(axis=1)
    top = counts.max(axis=1)
    tied = covered & ((counts == top[:, None]).sum(axis=1) >= 2)
    base = labels.copy()
    tie_count = 0
    for p in np.flatnonzero(tied):
        tie_count += 1
        k = min(knn_k + 1, tree.n_points)
        idx, _ = spatial_index.knn(tree, tree.positions[p], k)
        idx = idx[idx != p][:knn_k]
        idx = idx[covered[idx]]
        local = counts[p].copy()
        if idx.size:
            neigh = np.bincount(base[idx], minlength=counts.shape[1])
            local[int(neigh.argmax())] += 1
        labels[p] = int(local.argmax())
    uncovered = np.flatnonzero(~covered)
    if uncovered.size:
        nearest = _nearest_covered(
            tree.positions, uncovered, np.flatnonzero(covered)
        )
        labels[uncovered] = labels[nearest]
    return ResolveOutcome(labels, tie_count, int(uncovered.size))


def segment(cloud, tree, classifier, config, milestone_callback=None,
            milestones=(0.25, 0.5, 0.75, 1.0)):
    """Run the adaptive capture loop and resolve the resulting votes.

    Returns (SegmentationResult, VoteTable). The sum over the table always
    equals the summed presample sizes of all captured snapshots; the result
    labels every point even when the coverage target is reached early.

    milestone_callback(fraction, table) fires the first time coverage
    crosses each fraction of the coverage target, for progress exports.
    """
    cfg = config
    n = cloud.n_points
    if cfg.K < 1:
        raise ValueError("K must be >= 1")
    if not (0.0 < cfg.coverage_stop <= 1.0):
        raise ValueError("coverage_stop must lie in (0, 1]")
    if cfg.knn_k < 1:
        raise ValueError("knn_k must be >= 1")
    scales = tuple(float(s) for s in cfg.fov_scales)
    max_size = int(round(cfg.K * scales[-1]))
    if max_size > n:
        raise ValueError(
            f"largest field of view needs {max_size} points, scene has {n}"
        )
    n_classes = getattr(classifier, "n_classes", None)
    if n_classes is None:
        n_classes = classifier.svm.n_classes_
    table = VoteTable.empty(n, int(n_classes))
    selector = AdaptiveFovSelector(
        fov_scales=scales,
        warmup_min=cfg.warmup_min,
        refit_interval=cfg.refit_interval,
        seed=cfg.seed,
    )
    rng = as_rng(np.random.SeedSequence([int(cfg.seed), 1]))
    max_iters = cfg.max_iters
    if max_iters is None:
        max_iters = int(round(200 * n / cfg.K))
    log = []
    it = 0
    covered_n = 0
    next_milestone = 0
    stop_at = cfg.coverage_stop * n
    covered = np.zeros(n, dtype=bool)
    sizes = [int(round(cfg.K * s)) for s in scales]
    for it in range(1, max_iters + 1):
        anchor = spatial_index.random_anchor(rng, n)
        neighbors, _ = spatial_index.knn(
            tree, cloud.positions[anchor], sizes[-1]
        )
        variance = presample_variance(cloud, neighbors)
        scale = selector.select(variance)
        size = sizes[scales.index(scale)]
        presample = neighbors[:size]
        if size == cfg.K:
            down = presample
        else:
            keep = presample[presample != anchor]
            chosen = rng.choice(keep, size=cfg.K - 1, replace=False)
            down = np.concatenate(([anchor], chosen))
        pred = classifier.predict_points(cloud.positions[down])
        table.add_votes(presample, pred)
        newly = presample[~covered[presample]]
        covered[newly] = True
        covered_n += newly.size
        log.append((it, int(anchor), float(scale), int(pred)))
        if milestone_callback is not None:
            while next_milestone < len(milestones) and (
                covered_n >= milestones[next_milestone] * stop_at
            ):
                milestone_callback(milestones[next_milestone], table)
                next_milestone += 1
        if covered_n >= stop_at:
            break
    outcome = resolve_votes(table, tree, knn_k=cfg.knn_k)
    result = SegmentationResult(
        labels=outcome.labels,
        iterations=it,
        coverage=covered_n / n,
        tie_resolutions=outcome.tie_resolutions,
        uncovered_filled=outcome.uncovered_filled,
        capture_log=log,
    )
    return result, table


def save_capture_log(path, log):
    with open(path, "w") as fh:
        fh.write("# snapseg-capture-log v1: iteration,anchor,fov_scale,predicted_class\n")
        for it, anchor, scale, pred in log:
            fh.write(f"{it},{anchor},{scale:g},{pred}\n")


def save_labels(path, labels):
    with open(path, "w") as fh:
        for lab in labels:
            fh.write(f"{int(lab)}\n")


def load_labels(path):
    return np.loadtxt(path, dtype=np.int64, ndmin=1)


def fine_tune_for_scene(model, kmeans, point_sets, n_finetune, seed=0,
                        feature_model=None):
    """Continue cluster-head training on snapshots from a new scene.

    Draws n_finetune of the given (already normalized) point sets, labels
    them with the kmeans model over features from feature_model (defaults
    to the model being tuned), and fits the model on them for its
    configured epochs. n_finetune = 0 returns the model untouched.
    """
    if n_finetune < 0:
        raise ValueError("n_finetune must be >= 0")
    if n_finetune == 0:
        return model
    sets = np.asarray(point_sets, dtype=np.float64)
    if n_finetune > sets.shape[0]:
        raise ValueError(
            f"asked for {n_finetune} fine-tune snapshots, have {sets.shape[0]}"
        )
    rng = as_rng(seed)
    pick = rng.choice(sets.shape[0], size=int(n_finetune), replace=False)
    chosen = sets[pick]
    extractor = feature_model if feature_model is not None else model
    ids = kmeans.predict(extractor.transform(chosen))
    model.fit(chosen, ids)
    return model
