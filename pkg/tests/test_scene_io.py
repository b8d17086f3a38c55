import numpy as np
import pytest

from snapseg import scene_io
from snapseg.scene_io import (UNLABELED, ClassRemap, PointCloud,
                              SceneParseError, SceneStructureError,
                              export_colored_ply, load_scene, remap_labels,
                              save_scene)


def make_cloud(n=20, seed=0, n_classes=3):
    rng = np.random.default_rng(seed)
    pos = rng.random((n, 3)) * 10
    labels = rng.integers(0, n_classes, n)
    return PointCloud(pos, labels, n_classes)


def test_round_trip_xyzl(tmp_path):
    cloud = make_cloud()
    path = tmp_path / "scene.xyzl"
    save_scene(cloud, path)
    back = load_scene(path)
    assert np.allclose(back.positions, cloud.positions, atol=1e-6)
    assert np.array_equal(back.labels, cloud.labels)
    # a second cycle is exact: values are already at printed precision
    path2 = tmp_path / "again.xyzl"
    save_scene(back, path2)
    again = load_scene(path2)
    assert np.array_equal(again.positions, back.positions)


def test_load_xyz_irgb_labels(tmp_path):
    pts = tmp_path / "scene.txt"
    labs = tmp_path / "scene.labels"
    pts.write_text(
        "0.0 0.0 0.0 100 255 0 0\n"
        "1.0 0.0 0.0 90 0 255 0\n"
        "0.0 1.0 0.0 80 0 0 255\n"
    )
    labs.write_text("0\n1\n-1\n")
    cloud = load_scene(pts, labs, format="xyz_irgb_labels")
    assert cloud.n_points == 3
    assert cloud.positions.shape == (3, 3)  # intensity and color are dropped
    assert np.array_equal(cloud.labels, [0, 1, UNLABELED])
    assert cloud.n_classes == 2


def test_load_without_labels(tmp_path):
    pts = tmp_path / "scene.txt"
    pts.write_text("0 0 0 1 2 3 4\n1 1 1 1 2 3 4\n")
    cloud = load_scene(pts, format="xyz_irgb_labels")
    assert cloud.labels is None
    assert cloud.n_classes == 0


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.xyzl"
    path.write_text("0 0 0 1\n0 0 zebra 1\n0 0 0 1\n")
    with pytest.raises(SceneParseError, match="bad.xyzl:2"):
        load_scene(path)


def test_wrong_column_count(tmp_path):
    path = tmp_path / "bad.xyzl"
    path.write_text("0 0 0 1\n0 0 0\n")
    with pytest.raises(SceneParseError, match=":2"):
        load_scene(path)


def test_constant_wrong_column_count(tmp_path):
    path = tmp_path / "bad.xyzl"
    path.write_text("0 0 0 1 9\n0 0 0 1 9\n")
    with pytest.raises(SceneParseError, match="expected 4 columns"):
        load_scene(path)


def test_non_finite_coordinate(tmp_path):
    path = tmp_path / "bad.xyzl"
    path.write_text("0 0 0 1\n0 nan 0 1\n")
    with pytest.raises(SceneParseError, match=":2"):
        load_scene(path)


def test_non_integer_label(tmp_path):
    path = tmp_path / "bad.xyzl"
    path.write_text("0 0 0 1.5\n")
    with pytest.raises(SceneParseError, match="not an integer"):
        load_scene(path)


def test_label_count_mismatch(tmp_path):
    pts = tmp_path / "scene.txt"
    labs = tmp_path / "scene.labels"
    pts.write_text("0 0 0 1 2 3 4\n1 1 1 1 2 3 4\n")
    labs.write_text("0\n")
    with pytest.raises(SceneStructureError, match="1 labels for 2 points"):
        load_scene(pts, labs, format="xyz_irgb_labels")


def test_empty_file(tmp_path):
    path = tmp_path / "empty.xyzl"
    path.write_text("")
    with pytest.raises((SceneParseError, SceneStructureError)):
        load_scene(path)


def test_unknown_format(tmp_path):
    with pytest.raises(ValueError, match="unknown scene format"):
        load_scene(tmp_path / "x", format="laz")


def test_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, 0.0, np.inf]]))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), np.array([0, 5]), 3)
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), np.array([0, -2]), 3)
    cloud = PointCloud(np.zeros((1, 3)), np.array([UNLABELED]), 3)
    assert cloud.labels[0] == UNLABELED


def test_positions_read_only():
    cloud = make_cloud()
    with pytest.raises(ValueError):
        cloud.positions[0, 0] = 99.0


def test_remap_basic():
    cloud = PointCloud(np.zeros((4, 3)), np.array([0, 1, 2, UNLABELED]), 3)
    remap = ClassRemap(np.array([1, 0, UNLABELED]))
    out = remap_labels(cloud, remap)
    assert np.array_equal(out.labels, [1, 0, UNLABELED, UNLABELED])
    assert out.n_classes == 2


def test_remap_requires_contiguous_image():
    with pytest.raises(SceneStructureError, match="contiguous"):
        ClassRemap(np.array([0, 2]))


def test_remap_out_of_domain():
    cloud = PointCloud(np.zeros((2, 3)), np.array([0, 4]), 5)
    remap = ClassRemap(np.array([0, 1]))
    with pytest.raises(SceneStructureError, match="label id 4"):
        remap_labels(cloud, remap)


def test_ply_export(tmp_path):
    cloud = PointCloud(np.array([[0.0, 0.0, 0.0], [1.25, 2.5, 3.0]]),
                       np.array([0, UNLABELED]), 1)
    path = tmp_path / "out.ply"
    export_colored_ply(cloud, cloud.labels, [(255, 0, 0)], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "ply"
    assert "element vertex 2" in lines
    assert lines[lines.index("end_header") + 1].endswith("255 0 0")
    assert lines[-1].endswith("128 128 128")  # unlabeled renders gray


def test_ply_palette_too_small(tmp_path):
    cloud = make_cloud(n_classes=3)
    with pytest.raises(SceneStructureError, match="palette"):
        export_colored_ply(cloud, cloud.labels, [(1, 2, 3)], tmp_path / "x.ply")
