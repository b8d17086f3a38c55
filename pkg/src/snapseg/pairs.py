"""Contrastive pair generation from snapshots.

Three pretext tasks, all emitting balanced binary pairs (label 1 = same
origin, label 0 = different origin):

  part contrasting      two halves of one snapshot vs halves of different
                        snapshots
  scale contrasting     whole views of one anchor at different fields of
                        view vs views of different anchors
  multi-FOV contrasting halves again, but positives mix same-FOV and
                        cross-FOV cuts of one anchor with equal probability

Every emitted pair member is independently centered on its centroid and
scaled so its largest distance from the centroid is 1. Halves are resampled
to half the snapshot cardinality: short sides pad by drawing with
replacement, long sides trim by random drop.
"""

import dataclasses

import numpy as np

from .validation import as_rng

_CUT_RETRIES = 10


def normalize_points(points):
    """Center a point set and scale its max centroid distance to 1.

    Returns (normalized, scale). A degenerate set (all points identical)
    gets scale 1 so the output stays finite.
    """
    pts = np.asarray(points, dtype=np.float64)
    centered = pts - pts.mean(axis=0)
    scale = float(np.sqrt((centered * centered).sum(axis=1).max()))
    if scale == 0.0:
        scale = 1.0
    return centered / scale, scale


def normalize_sets(sets):
    """Vectorized normalize_points over a (B, n, 3) stack.

    Returns (normalized, scales) with scales shaped (B,).
    """
    arr = np.asarray(sets, dtype=np.float64)
    centered = arr - arr.mean(axis=1, keepdims=True)
    scale = np.sqrt((centered * centered).sum(axis=2).max(axis=1))
    scale = np.where(scale == 0.0, 1.0, scale)
    return centered / scale[:, None, None], scale


@dataclasses.dataclass(frozen=True)
class HalfCut:
    """A planar cut of one point set.

    side_a / side_b index into the rows of the input set and partition it
    exactly. a / b are the resampled raw-coordinate sides, each half the
    input cardinality (rounded down).
    """

    normal: np.ndarray
    side_a: np.ndarray
    side_b: np.ndarray
    a: np.ndarray
    b: np.ndarray


def _resample(points, k_out, rng):
    n = points.shape[0]
    if n == k_out:
        return points.copy()
    if n < k_out:
        extra = rng.choice(n, size=k_out - n, replace=True)
        return np.concatenate([points, points[extra]])
    keep = rng.choice(n, size=k_out, replace=False)
    return points[keep]


def half_cut(points, rng=None, k_out=None):
    """Cut a point set by a random plane through its centroid.

    Retries a few normals if one side comes out empty; a fully degenerate
    set falls back to an index split so the partition invariant holds.
    """
    rng = as_rng(rng)
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n < 2:
        raise ValueError("cannot cut a set of fewer than 2 points")
    if k_out is None:
        k_out = n // 2
    centered = pts - pts.mean(axis=0)
    normal = None
    side_a = side_b = None
    for _ in range(_CUT_RETRIES):
        cand = rng.standard_normal(3)
        norm = np.linalg.norm(cand)
        if norm == 0.0:
            continue
        cand = cand / norm
        dots = centered @ cand
        mask = dots >= 0
        if mask.any() and (~mask).any():
            normal = cand
            side_a = np.flatnonzero(mask)
            side_b = np.flatnonzero(~mask)
            break
    if normal is None:
        # all points coincide along every sampled normal; split by index
        normal = np.array([1.0, 0.0, 0.0])
        half = n // 2
        side_a = np.arange(half)
        side_b = np.arange(half, n)
    return HalfCut(
        normal=normal,
        side_a=side_a,
        side_b=side_b,
        a=_resample(pts[side_a], k_out, rng),
        b=_resample(pts[side_b], k_out, rng),
    )


@dataclasses.dataclass(frozen=True)
class ContrastPair:
    """One training pair: two point sets and a same-origin label."""

    a: np.ndarray
    b: np.ndarray
    label: int
    mode: str
    anchor_a: int = -1
    anchor_b: int = -1


def _norm(points):
    return normalize_points(points)[0]


def make_part_pairs(point_sets, rng=None, pairs_per_snapshot=1, anchors=None):
    """Half-cut pairs: positives from one snapshot, negatives across two.

    point_sets is a (B, K, 3) stack or list of (K, 3) arrays; at least two
    snapshots are required so negatives exist. Output is balanced 1:1.
    """
    rng = as_rng(rng)
    sets = [np.asarray(s, dtype=np.float64) for s in point_sets]
    if len(sets) < 2:
        raise ValueError("part pairs need at least 2 snapshots")
    if anchors is None:
        anchors = list(range(len(sets)))
    k_out = sets[0].shape[0] // 2
    pairs = []
    for i, pts in enumerate(sets):
        for _ in range(pairs_per_snapshot):
            cut = half_cut(pts, rng, k_out)
            pairs.append(ContrastPair(
                _norm(cut.a), _norm(cut.b), 1, "part", anchors[i], anchors[i],
            ))
            j = int(rng.integers(len(sets) - 1))
            if j >= i:
                j += 1
            other = half_cut(sets[j], rng, k_out)
            pairs.append(ContrastPair(
                _norm(cut.a), _norm(other.a), 0, "part", anchors[i], anchors[j],
            ))
    return pairs


def _pick_two(n, rng):
    i = int(rng.integers(n))
    j = int(rng.integers(n - 1))
    if j >= i:
        j += 1
    return i, j


def make_scale_pairs(multi_sets, rng=None, pairs_per_anchor=1, anchors=None):
    """Whole-view pairs: positives are two fields of view of one anchor."""
    rng = as_rng(rng)
    groups = [[np.asarray(v, dtype=np.float64) for v in g] for g in multi_sets]
    if len(groups) < 2:
        raise ValueError("scale pairs need at least 2 anchors")
    if any(len(g) < 2 for g in groups):
        raise ValueError("scale pairs need at least 2 views per anchor")
    if anchors is None:
        anchors = list(range(len(groups)))
    pairs = []
    for i, views in enumerate(groups):
        for _ in range(pairs_per_anchor):
            vi, vj = _pick_two(len(views), rng)
            pairs.append(ContrastPair(
                _norm(views[vi]), _norm(views[vj]), 1, "scale",
                anchors[i], anchors[i],
            ))
            j = int(rng.integers(len(groups) - 1))
            if j >= i:
                j += 1
            va = int(rng.integers(len(views)))
            vb = int(rng.integers(len(groups[j])))
            pairs.append(ContrastPair(
                _norm(views[va]), _norm(groups[j][vb]), 0, "scale",
                anchors[i], anchors[j],
            ))
    return pairs


def make_multifov_pairs(multi_sets, rng=None, pairs_per_anchor=1, anchors=None):
    """Half-cut pairs across fields of view.

    Positives come from one anchor: with probability 1/2 both halves of a
    single view's cut, otherwise one half from each of two different views.
    Negatives take halves from two different anchors.
    """
    rng = as_rng(rng)
    groups = [[np.asarray(v, dtype=np.float64) for v in g] for g in multi_sets]
    if len(groups) < 2:
        raise ValueError("multi-FOV pairs need at least 2 anchors")
    if any(len(g) < 2 for g in groups):
        raise ValueError("multi-FOV pairs need at least 2 views per anchor")
    if anchors is None:
        anchors = list(range(len(groups)))
    k_out = groups[0][0].shape[0] // 2
    pairs = []
    for i, views in enumerate(groups):
        for _ in range(pairs_per_anchor):
            if rng.random() < 0.5:
                v = int(rng.integers(len(views)))
                cut = half_cut(views[v], rng, k_out)
                a, b = cut.a, cut.b
            else:
                vi, vj = _pick_two(len(views), rng)
                a = half_cut(views[vi], rng, k_out).a
                b = half_cut(views[vj], rng, k_out).b
            pairs.append(ContrastPair(
                _norm(a), _norm(b), 1, "multi_fov", anchors[i], anchors[i],
            ))
            j = int(rng.integers(len(groups) - 1))
            if j >= i:
                j += 1
            va = int(rng.integers(len(views)))
            vb = int(rng.integers(len(groups[j])))
            na = half_cut(views[va], rng, k_out).a
            nb = half_cut(groups[j][vb], rng, k_out).b
            pairs.append(ContrastPair(
                _norm(na), _norm(nb), 0, "multi_fov", anchors[i], anchors[j],
            ))
    return pairs


def dump_pairs(path, pairs):
    """Debug dump: one line per pair with label, mode, and anchor ids."""
    with open(path, "w") as fh:
        fh.write(f"n_pairs {len(pairs)}\n")
        for p in pairs:
            fh.write(
                f"{p.label} {p.mode} {p.anchor_a} {p.anchor_b} "
                f"{p.a.shape[0]} {p.b.shape[0]}\n"
            )


def stack_pairs(pairs):
    """Stack a pair list into (A, B, labels) arrays for batched training."""
    if not pairs:
        raise ValueError("empty pair list")
    a = np.stack([p.a for p in pairs])
    b = np.stack([p.b for p in pairs])
    labels = np.array([p.label for p in pairs], dtype=np.int64)
    return a, b, labels
