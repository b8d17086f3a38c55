"""Exact k-nearest-neighbor search over a static scene.

The tree is array-based: node metadata lives in flat numpy arrays and every
node owns a contiguous slice of a permutation of the point indices, so leaf
scans are vectorized. Queries use best-first traversal ordered by
bounding-box distance, which makes the candidate set exact without visiting
more leaves than necessary.

Ties are deterministic everywhere: equal coordinates sort by point index at
build time, equal distances sort by point index at query time, and nodes
whose bounding box sits exactly at the current k-th distance are still
visited so an index-tie candidate can never be pruned.
"""

import dataclasses
import heapq

import numpy as np

from .scene_io import PointCloud
from .validation import check_positions


@dataclasses.dataclass
class KdTree:
    """Static kd-tree over an (N, 3) coordinate array.

    positions     the original coordinates (not copied)
    leaf_size     max points per leaf
    perm          permutation such that node i owns perm[start[i]:end[i]]
    node_axis     split axis per node, -1 for leaves
    node_split    split coordinate; left coords <= split <= right coords
    node_left     child node ids (-1 for leaves)
    node_right
    node_start    slice bounds into perm
    node_end
    node_bbmin    tight bounding box per node
    node_bbmax
    """

    positions: np.ndarray
    leaf_size: int
    perm: np.ndarray
    node_axis: np.ndarray
    node_split: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    node_start: np.ndarray
    node_end: np.ndarray
    node_bbmin: np.ndarray
    node_bbmax: np.ndarray
    _sorted: np.ndarray = None

    @property
    def n_points(self):
        return self.positions.shape[0]

    @property
    def n_nodes(self):
        return self.node_axis.shape[0]

    def knn(self, query, k):
        return knn(self, query, k)


def build(cloud, leaf_size=32):
    """Build a KdTree from a PointCloud or an (N, 3) array.

    Internal nodes split on the axis of largest bounding-box extent at the
    median, left-balanced: for count points the left child gets count // 2.
    """
    if isinstance(cloud, PointCloud):
        positions = cloud.positions
    else:
        positions = check_positions(cloud)
    if leaf_size < 1:
        raise ValueError("leaf_size must be >= 1")
    n = positions.shape[0]
    perm = np.arange(n, dtype=np.int64)

    axis_l, split_l, left_l, right_l = [], [], [], []
    start_l, end_l, bbmin_l, bbmax_l = [], [], [], []

    def make_node(start, end):
        node = len(axis_l)
        seg = perm[start:end]
        pts = positions[seg]
        bbmin = pts.min(axis=0)
        bbmax = pts.max(axis=0)
        axis_l.append(-1)
        split_l.append(0.0)
        left_l.append(-1)
        right_l.append(-1)
        start_l.append(start)
        end_l.append(end)
        bbmin_l.append(bbmin)
        bbmax_l.append(bbmax)
        count = end - start
        if count <= leaf_size:
            return node
        axis = int(np.argmax(bbmax - bbmin))
        coords = pts[:, axis]
        # stable (coordinate, index) order keeps duplicate coords deterministic
        order = np.lexsort((seg, coords))
        perm[start:end] = seg[order]
        mid = count // 2
        split = float(coords[order[mid]])
        axis_l[node] = axis
        split_l[node] = split
        left_l[node] = make_node(start, start + mid)
        right_l[node] = make_node(start + mid, end)
        return node

    make_node(0, n)
    tree = KdTree(
        positions=positions,
        leaf_size=int(leaf_size),
        perm=perm,
        node_axis=np.asarray(axis_l, dtype=np.int8),
        node_split=np.asarray(split_l, dtype=np.float64),
        node_left=np.asarray(left_l, dtype=np.int32),
        node_right=np.asarray(right_l, dtype=np.int32),
        node_start=np.asarray(start_l, dtype=np.int64),
        node_end=np.asarray(end_l, dtype=np.int64),
        node_bbmin=np.asarray(bbmin_l, dtype=np.float64),
        node_bbmax=np.asarray(bbmax_l, dtype=np.float64),
    )
    tree._sorted = np.ascontiguousarray(positions[perm])
    return tree


def _bbox_dist_sq(bbmin, bbmax, q):
    d = np.maximum(bbmin - q, 0.0) + np.maximum(q - bbmax, 0.0)
    return float(d @ d)


def knn(tree, query, k):
    """Exact k nearest neighbors of a query point.

    Returns (indices, distances), both length k, sorted by (distance, index)
    ascending. Errors if k is not in [1, n_points].
    """
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != 3:
        raise ValueError(f"query must have 3 coordinates, got {q.shape[0]}")
    if not np.all(np.isfinite(q)):
        raise ValueError("query contains non-finite coordinates")
    k = int(k)
    if k < 1 or k > tree.n_points:
        raise ValueError(f"k={k} out of range [1, {tree.n_points}]")

    pts = tree._sorted
    cand_d, cand_i, n_cand = [], [], 0
    tau2 = np.inf
    compact_at = max(4 * k, 1024)

    def compact():
        nonlocal cand_d, cand_i, n_cand, tau2
        d2 = np.concatenate(cand_d)
        idx = np.concatenate(cand_i)
        if d2.shape[0] > k:
            kth = np.partition(d2, k - 1)[k - 1]
            keep = d2 <= kth  # ties at the k-th distance stay in play
            d2, idx = d2[keep], idx[keep]
            tau2 = float(kth)
        cand_d, cand_i, n_cand = [d2], [idx], d2.shape[0]

    heap = [(_bbox_dist_sq(tree.node_bbmin[0], tree.node_bbmax[0], q), 0)]
    while heap:
        d2min, node = heapq.heappop(heap)
        if d2min > tau2:
            break  # best-first order: every remaining node is at least this far
        if tree.node_axis[node] == -1:
            s, e = tree.node_start[node], tree.node_end[node]
            diff = pts[s:e] - q
            d2 = (diff * diff).sum(axis=1)
            cand_d.append(d2)
            cand_i.append(tree.perm[s:e])
            n_cand += e - s
            if n_cand >= compact_at:
                compact()
        else:
            for child in (tree.node_left[node], tree.node_right[node]):
                cd = _bbox_dist_sq(
                    tree.node_bbmin[child], tree.node_bbmax[child], q
                )
                if cd <= tau2:
                    heapq.heappush(heap, (cd, int(child)))
    compact()
    d2 = cand_d[0]
    idx = cand_i[0]
    order = np.lexsort((idx, d2))[:k]
    return idx[order], np.sqrt(d2[order])


def random_anchor(rng, n_points):
    """Draw a uniform anchor index in [0, n_points)."""
    if n_points < 1:
        raise ValueError("need at least one point")
    return int(rng.integers(0, n_points))
