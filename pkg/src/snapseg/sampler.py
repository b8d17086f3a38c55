"""Snapshot sampling: local neighborhoods captured around random anchors.

A snapshot is the K-nearest neighborhood of an anchor point, optionally
captured at several fields of view at once. Larger fields of view take the
K * scale nearest points (the presample) and randomly downsample back to K,
so every view has the same cardinality while covering a different extent.
The anchor always survives downsampling.

Multi-FOV capture runs one kNN query at the largest size; smaller views are
prefixes of that result, which makes the nesting exact and the query cheap.
"""

import dataclasses

import numpy as np

from . import spatial_index
from .scene_io import UNLABELED
from .validation import as_rng, check_indices, check_labels


@dataclasses.dataclass(frozen=True)
class Snapshot:
    """One captured view: anchor, field of view, and the two index sets."""

    anchor: int
    fov_scale: float
    presampled: np.ndarray
    downsampled: np.ndarray
    K: int


@dataclasses.dataclass(frozen=True)
class MultiFovSnapshot:
    """All views of one anchor, ascending field of view."""

    anchor: int
    views: tuple


@dataclasses.dataclass(frozen=True)
class SnapshotLabel:
    class_id: int
    purity: float


def _presample_size(K, scale):
    return int(round(K * scale))


def _downsample(presampled, anchor, K, rng):
    """Keep the anchor, drop random others until K remain."""
    if presampled.shape[0] == K:
        return presampled.copy()
    keep = presampled[presampled != anchor]
    if keep.shape[0] == presampled.shape[0]:
        raise ValueError(f"anchor {anchor} missing from its own presample")
    chosen = rng.choice(keep, size=K - 1, replace=False)
    return np.concatenate(([anchor], chosen))


def sample_single_fov(tree, cloud, anchor, K, presample_factor=10, rng=None):
    """Capture one snapshot: presample K * factor neighbors, downsample to K.

    With presample_factor == 1 the presample and downsample are identical.
    """
    rng = as_rng(rng)
    if K < 1:
        raise ValueError("K must be >= 1")
    if presample_factor < 1:
        raise ValueError("presample_factor must be >= 1")
    size = _presample_size(K, presample_factor)
    if size > tree.n_points:
        raise ValueError(
            f"presample of {size} points exceeds scene size {tree.n_points}"
        )
    presampled, _ = spatial_index.knn(tree, cloud.positions[anchor], size)
    down = _downsample(presampled, anchor, K, rng)
    return Snapshot(int(anchor), 1.0, presampled, down, int(K))


def sample_multi_fov(tree, cloud, anchor, K, fov_scales, rng=None):
    """Capture nested views of one anchor at each field-of-view scale.

    fov_scales must be >= 1 and strictly increasing; the scale-s view
    presamples the K * s nearest points (a prefix of the largest query)
    and downsamples to K.
    """
    rng = as_rng(rng)
    scales = [float(s) for s in fov_scales]
    if not scales:
        raise ValueError("fov_scales must be non-empty")
    if scales[0] < 1 or any(b <= a for a, b in zip(scales, scales[1:])):
        raise ValueError(f"fov_scales must be >= 1 and strictly increasing, got {scales}")
    max_size = _presample_size(K, scales[-1])
    if max_size > tree.n_points:
        raise ValueError(
            f"largest presample of {max_size} points exceeds scene size "
            f"{tree.n_points}"
        )
    neighbors, _ = spatial_index.knn(tree, cloud.positions[anchor], max_size)
    views = []
    for s in scales:
        pre = neighbors[: _presample_size(K, s)]
        down = _downsample(pre, anchor, K, rng)
        views.append(Snapshot(int(anchor), s, pre, down, int(K)))
    return MultiFovSnapshot(int(anchor), tuple(views))


def vote_label(member_labels):
    """Majority-vote class over a snapshot's downsampled members.

    Ties go to the smallest class id. Purity is the winning count divided
    by the member count. All members must carry a real label.
    """
    labels = check_labels(member_labels, allow_unlabeled=True)
    if labels.size == 0:
        raise ValueError("cannot vote over an empty member set")
    if (labels == UNLABELED).any():
        raise ValueError("cannot vote over unlabeled members")
    counts = np.bincount(labels)
    winner = int(np.argmax(counts))
    return SnapshotLabel(winner, float(counts[winner]) / labels.shape[0])


def label_snapshot(cloud, snapshot):
    """Vote a label for one snapshot from the ground-truth scene labels."""
    if cloud.labels is None:
        raise ValueError("scene has no labels to vote over")
    return vote_label(cloud.labels[snapshot.downsampled])


@dataclasses.dataclass(frozen=True)
class PurityReport:
    """Per-class purity statistics over a batch of labeled snapshots."""

    n_classes: int
    counts: np.ndarray
    mean_purity: np.ndarray
    std_purity: np.ndarray
    overall_mean: float
    overall_std: float
    n_runs: int

    @property
    def mean_counts(self):
        return self.counts / self.n_runs

    @property
    def present(self):
        return self.counts > 0


def purity_report(snapshot_labels, n_classes, n_runs=1):
    """Aggregate SnapshotLabels into per-class mean/std purity and counts.

    n_runs divides the raw counts into a mean-per-run figure for reporting;
    statistics themselves pool all snapshots.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    ids = np.array([s.class_id for s in snapshot_labels], dtype=np.int64)
    pur = np.array([s.purity for s in snapshot_labels], dtype=np.float64)
    if ids.size == 0:
        raise ValueError("no snapshot labels to report on")
    if ids.min() < 0 or ids.max() >= n_classes:
        raise ValueError("snapshot label outside [0, n_classes)")
    counts = np.bincount(ids, minlength=n_classes)
    mean = np.full(n_classes, np.nan)
    std = np.full(n_classes, np.nan)
    for c in range(n_classes):
        sel = pur[ids == c]
        if sel.size:
            mean[c] = sel.mean()
            std[c] = sel.std()
    return PurityReport(
        n_classes=int(n_classes),
        counts=counts,
        mean_purity=mean,
        std_purity=std,
        overall_mean=float(pur.mean()),
        overall_std=float(pur.std()),
        n_runs=int(n_runs),
    )


def presample_variance(cloud, indices):
    """Mean squared distance of the indexed points to their centroid."""
    idx = check_indices(indices, cloud.n_points)
    if idx.size == 0:
        raise ValueError("variance of an empty index set is undefined")
    pts = cloud.positions[idx]
    d = pts - pts.mean(axis=0)
    return float((d * d).sum(axis=1).mean())


@dataclasses.dataclass
class AdaptiveFovSelector:
    """Chooses a field of view from the spatial variance of a presample.

    Variances seen so far are clustered (1-D KMeans, one cluster per scale)
    and cluster ranks map monotonically onto scale ranks: tighter
    neighborhoods get smaller fields of view. Until warmup_min variances
    have been observed the smallest scale is returned; the clustering is
    refit every refit_interval observations after that.
    """

    fov_scales: tuple
    warmup_min: int = 256
    refit_interval: int = 512
    seed: int = 0
    variance_history: list = dataclasses.field(default_factory=list)
    kmeans_model: object = None
    scale_for_cluster: np.ndarray = None
    _n_at_last_fit: int = 0
    _n_fits: int = 0

    def __post_init__(self):
        scales = tuple(float(s) for s in self.fov_scales)
        if not scales or any(b <= a for a, b in zip(scales, scales[1:])):
            raise ValueError("fov_scales must be non-empty and strictly increasing")
        self.fov_scales = scales
        if self.warmup_min < len(scales):
            raise ValueError("warmup_min must be at least the number of scales")
        if self.refit_interval < 1:
            raise ValueError("refit_interval must be >= 1")

    def _refit(self):
        from .clustering import KMeans

        hist = np.asarray(self.variance_history, dtype=np.float64).reshape(-1, 1)
        seed = np.random.SeedSequence([int(self.seed), self._n_fits])
        model = KMeans(
            n_clusters=len(self.fov_scales), seed=seed, max_iters=100, tol=1e-10
        ).fit(hist)
        order = np.argsort(model.centers_[:, 0], kind="stable")
        mapping = np.empty(len(self.fov_scales), dtype=np.float64)
        mapping[order] = np.asarray(self.fov_scales)
        self.kmeans_model = model
        self.scale_for_cluster = mapping
        self._n_at_last_fit = len(self.variance_history)
        self._n_fits += 1

    def select(self, variance):
        v = float(variance)
        if not np.isfinite(v) or v < 0:
            raise ValueError(f"variance must be finite and >= 0, got {v}")
        self.variance_history.append(v)
        if len(self.variance_history) < self.warmup_min:
            return self.fov_scales[0]
        if (
            self.kmeans_model is None
            or len(self.variance_history) - self._n_at_last_fit
            >= self.refit_interval
        ):
            self._refit()
        cluster = int(self.kmeans_model.predict(np.array([[v]]))[0])
        return float(self.scale_for_cluster[cluster])


def select_fov(selector, variance):
    """Feed one variance observation to the selector, get a fov scale back."""
    return selector.select(variance)


class SnapshotFormatError(ValueError):
    """A snapshot file failed to parse (message carries the line number)."""


@dataclasses.dataclass(frozen=True)
class SnapshotRecord:
    """One persisted view: anchor, scale, and its K downsampled indices."""

    anchor: int
    fov_scale: float
    downsampled: np.ndarray


@dataclasses.dataclass(frozen=True)
class SnapshotFile:
    K: int
    fov_scales: tuple
    seed: int
    records: list


def _fmt_scale(s):
    return f"{s:g}"


def save_snapshots(path, snapshots, K, fov_scales, seed):
    """Persist snapshots as text: a 3-line header then one view per line.

    Accepts Snapshot, MultiFovSnapshot, and SnapshotRecord instances mixed.
    """
    with open(path, "w") as fh:
        fh.write(f"K {int(K)}\n")
        fh.write("fov_scales " + " ".join(_fmt_scale(s) for s in fov_scales) + "\n")
        fh.write(f"seed {int(seed)}\n")
        for snap in snapshots:
            views = snap.views if isinstance(snap, MultiFovSnapshot) else (snap,)
            for v in views:
                idx = " ".join(str(int(i)) for i in v.downsampled)
                fh.write(f"{int(v.anchor)} {_fmt_scale(v.fov_scale)} {idx}\n")


def load_snapshots(path):
    """Read a snapshot file back into header metadata plus flat records."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if len(lines) < 3:
        raise SnapshotFormatError(f"{path}: truncated header")
    header = {}
    for lineno, key in enumerate(("K", "fov_scales", "seed"), start=1):
        parts = lines[lineno - 1].split()
        if not parts or parts[0] != key:
            raise SnapshotFormatError(f"{path}:{lineno}: expected '{key} ...'")
        header[key] = parts[1:]
    try:
        K = int(header["K"][0])
        fov_scales = tuple(float(s) for s in header["fov_scales"])
        seed = int(header["seed"][0])
    except (ValueError, IndexError) as exc:
        raise SnapshotFormatError(f"{path}: bad header value: {exc}") from exc
    records = []
    for lineno, line in enumerate(lines[3:], start=4):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != K + 2:
            raise SnapshotFormatError(
                f"{path}:{lineno}: expected {K + 2} fields, found {len(parts)}"
            )
        try:
            anchor = int(parts[0])
            scale = float(parts[1])
            idx = np.array([int(t) for t in parts[2:]], dtype=np.int64)
        except ValueError as exc:
            raise SnapshotFormatError(f"{path}:{lineno}: {exc}") from exc
        records.append(SnapshotRecord(anchor, scale, idx))
    return SnapshotFile(K, fov_scales, seed, records)


def group_records_by_anchor(records, n_views):
    """Split a flat record list into consecutive per-anchor view groups."""
    if len(records) % n_views != 0:
        raise ValueError(
            f"{len(records)} records do not divide into groups of {n_views}"
        )
    groups = []
    for i in range(0, len(records), n_views):
        group = records[i : i + n_views]
        if any(r.anchor != group[0].anchor for r in group[1:]):
            raise ValueError(f"record group at row {i} mixes anchors")
        groups.append(group)
    return groups


def record_point_sets(cloud, records):
    """Stack the raw (not normalized) downsampled point sets, (B, K, 3)."""
    return np.stack([cloud.positions[r.downsampled] for r in records])
