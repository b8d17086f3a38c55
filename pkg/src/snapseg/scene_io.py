"""Loading, relabeling, and export of ASCII point-cloud scenes.

Two row formats are supported:

  xyzl             "x y z label", one point per line
  xyz_irgb_labels  "x y z intensity r g b" with labels in a parallel file,
                   one integer per line, same ordering

Intensity and color are parsed (so malformed files fail loudly) and then
dropped: the pipeline downstream is geometry-only. Coordinates are held in
float64 so survey-scale offsets do not perturb nearest-neighbor ties.
"""

import dataclasses
import warnings

import numpy as np

from .validation import check_labels, check_positions

UNLABELED = -1

FORMATS = ("xyzl", "xyz_irgb_labels")


class SceneParseError(ValueError):
    """A line of a scene file failed to parse (message carries the line number)."""


class SceneStructureError(ValueError):
    """Files parsed but disagree structurally (counts, label domain, shape)."""


@dataclasses.dataclass(frozen=True)
class PointCloud:
    """An immutable point scene.

    positions   (N, 3) float64, finite
    labels      (N,) int64 in [0, n_classes) or UNLABELED, or None
    n_classes   number of semantic classes the labels refer to
    class_names one name per class
    """

    positions: np.ndarray
    labels: np.ndarray | None = None
    n_classes: int = 0
    class_names: tuple = ()

    def __post_init__(self):
        pos = check_positions(self.positions)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.labels is not None:
            lab = check_labels(
                self.labels, n=pos.shape[0], n_classes=self.n_classes or None,
                allow_unlabeled=True,
            )
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)
        if self.class_names:
            if len(self.class_names) != self.n_classes:
                raise SceneStructureError(
                    f"{len(self.class_names)} class names for "
                    f"{self.n_classes} classes"
                )
            object.__setattr__(self, "class_names", tuple(self.class_names))
        elif self.n_classes:
            object.__setattr__(
                self, "class_names",
                tuple(f"class_{i}" for i in range(self.n_classes)),
            )

    @property
    def n_points(self):
        return self.positions.shape[0]

    def with_labels(self, labels, n_classes=None, class_names=()):
        return PointCloud(
            self.positions, labels,
            self.n_classes if n_classes is None else n_classes,
            class_names or (self.class_names if n_classes is None else ()),
        )


@dataclasses.dataclass(frozen=True)
class ClassRemap:
    """Maps source class ids to a new contiguous labeling.

    mapping[i] is the new id for source class i; UNLABELED entries drop the
    class. New ids must cover 0..max(new) with no gaps.
    """

    mapping: np.ndarray
    new_names: tuple = ()

    def __post_init__(self):
        arr = np.asarray(self.mapping, dtype=np.int64)
        if arr.ndim != 1:
            raise SceneStructureError("remap mapping must be 1-dimensional")
        image = np.unique(arr[arr != UNLABELED])
        if arr[arr != UNLABELED].size and arr.min() < UNLABELED:
            raise SceneStructureError("remap target ids must be >= -1")
        if image.size and not np.array_equal(image, np.arange(image.size)):
            raise SceneStructureError(
                f"remap image {image.tolist()} is not contiguous from 0"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "mapping", arr)
        n_new = int(image.size)
        if self.new_names and len(self.new_names) != n_new:
            raise SceneStructureError(
                f"{len(self.new_names)} names for {n_new} remapped classes"
            )
        object.__setattr__(self, "new_names", tuple(self.new_names))

    @property
    def n_new(self):
        img = self.mapping[self.mapping != UNLABELED]
        return int(img.max()) + 1 if img.size else 0


def _scan_for_parse_error(path, n_cols):
    """Walk a file line by line to locate the first malformed row."""
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                return lineno, "blank line"
            if len(parts) != n_cols:
                return lineno, f"expected {n_cols} columns, found {len(parts)}"
            for tok in parts:
                try:
                    float(tok)
                except ValueError:
                    return lineno, f"cannot parse {tok!r} as a number"
    return None, None


def _load_table(path, n_cols, what):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # an empty file is our error, below
            data = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        lineno, reason = _scan_for_parse_error(path, n_cols)
        if lineno is not None:
            raise SceneParseError(f"{path}:{lineno}: {reason}") from exc
        raise SceneParseError(f"{path}: {exc}") from exc
    if data.size == 0:
        raise SceneStructureError(f"{path}: empty {what} file")
    if data.shape[1] != n_cols:
        raise SceneParseError(
            f"{path}:1: expected {n_cols} columns, found {data.shape[1]}"
        )
    return data


def _check_finite_rows(data, path):
    bad = ~np.isfinite(data).all(axis=1)
    if bad.any():
        lineno = int(np.argmax(bad)) + 1
        raise SceneParseError(f"{path}:{lineno}: non-finite coordinate")


def _labels_from_column(col, path):
    if not np.all(col == np.floor(col)):
        lineno = int(np.argmax(col != np.floor(col))) + 1
        raise SceneParseError(f"{path}:{lineno}: label is not an integer")
    labels = col.astype(np.int64)
    if labels.min() < UNLABELED:
        lineno = int(np.argmax(labels < UNLABELED)) + 1
        raise SceneParseError(
            f"{path}:{lineno}: label {int(labels[lineno - 1])} below {UNLABELED}"
        )
    return labels


def load_scene(points_path, labels_path=None, format="xyzl"):
    """Load a scene file (and optional label file) into a PointCloud.

    n_classes is inferred as max(label) + 1; a scene whose labels are all
    UNLABELED gets n_classes = 0.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown scene format {format!r}, expected one of {FORMATS}")
    if format == "xyzl":
        data = _load_table(points_path, 4, "scene")
        _check_finite_rows(data, points_path)
        positions = data[:, :3]
        labels = _labels_from_column(data[:, 3], points_path)
    else:
        data = _load_table(points_path, 7, "scene")
        _check_finite_rows(data, points_path)
        positions = data[:, :3]
        # columns 3..6 are intensity and r, g, b; validated above, then dropped
        labels = None
        if labels_path is not None:
            ldata = _load_table(labels_path, 1, "label")
            if ldata.shape[0] != data.shape[0]:
                raise SceneStructureError(
                    f"{labels_path}: {ldata.shape[0]} labels for "
                    f"{data.shape[0]} points"
                )
            labels = _labels_from_column(ldata[:, 0], labels_path)
    n_classes = 0
    if labels is not None and (labels != UNLABELED).any():
        n_classes = int(labels.max()) + 1
    return PointCloud(positions, labels, n_classes)


def save_scene(cloud, points_path, format="xyzl", labels_path=None):
    """Write a scene back to disk; inverse of load_scene at 6 decimals."""
    if format not in FORMATS:
        raise ValueError(f"unknown scene format {format!r}, expected one of {FORMATS}")
    labels = cloud.labels
    if labels is None:
        labels = np.full(cloud.n_points, UNLABELED, dtype=np.int64)
    with open(points_path, "w") as fh:
        if format == "xyzl":
            for p, lab in zip(cloud.positions, labels):
                fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {int(lab)}\n")
        else:
            for p in cloud.positions:
                fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} 0 0 0 0\n")
    if format == "xyz_irgb_labels" and labels_path is not None:
        with open(labels_path, "w") as fh:
            for lab in labels:
                fh.write(f"{int(lab)}\n")


def remap_labels(cloud, remap):
    """Apply a ClassRemap to a labeled cloud.

    UNLABELED points pass through; a label outside the remap domain is an
    error naming the offending id.
    """
    if cloud.labels is None:
        raise SceneStructureError("cannot remap an unlabeled cloud")
    labels = cloud.labels
    mask = labels != UNLABELED
    if mask.any():
        out_of_domain = labels[mask][labels[mask] >= remap.mapping.shape[0]]
        if out_of_domain.size:
            raise SceneStructureError(
                f"label id {int(out_of_domain[0])} outside remap domain "
                f"[0, {remap.mapping.shape[0]})"
            )
    new = np.full_like(labels, UNLABELED)
    new[mask] = remap.mapping[labels[mask]]
    return PointCloud(cloud.positions, new, remap.n_new, remap.new_names)


UNLABELED_COLOR = (128, 128, 128)


def export_colored_ply(cloud, labels, palette, path):
    """Write an ASCII PLY with one RGB color per class.

    palette is a sequence of (r, g, b) byte triples, one per class id;
    UNLABELED points get a fixed mid-gray.
    """
    labels = check_labels(labels, n=cloud.n_points, allow_unlabeled=True)
    if labels.size and labels.max() >= len(palette):
        raise SceneStructureError(
            f"label id {int(labels.max())} has no palette entry "
            f"({len(palette)} colors)"
        )
    with open(path, "w") as fh:
        fh.write("ply\n")
        fh.write("format ascii 1.0\n")
        fh.write(f"element vertex {cloud.n_points}\n")
        fh.write("property float x\n")
        fh.write("property float y\n")
        fh.write("property float z\n")
        fh.write("property uchar red\n")
        fh.write("property uchar green\n")
        fh.write("property uchar blue\n")
        fh.write("end_header\n")
        for p, lab in zip(cloud.positions, labels):
            r, g, b = UNLABELED_COLOR if lab == UNLABELED else palette[int(lab)]
            fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {r} {g} {b}\n")
