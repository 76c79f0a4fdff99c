from pathlib import Path

import numpy as np
import pytest

from fruitshape.cloud import PointCloud
from fruitshape.cloudio import CloudFormatError, read_cloud, write_cloud

DATA = Path(__file__).parent / "data"
FORMATS = [("pcd", True), ("pcd", False), ("ply", True), ("ply", False)]


def _cloud(rng, n, colors=True, normals=True):
    pts = rng.normal(scale=0.3, size=(n, 3))
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return PointCloud(
        pts,
        rng.integers(0, 256, size=(n, 3)) if colors else None,
        nrm if normals else None,
    )


@pytest.mark.parametrize("fmt, binary", FORMATS)
def test_empty_cloud_round_trip(tmp_path, fmt, binary):
    path = tmp_path / f"empty.{fmt}"
    write_cloud(PointCloud(np.empty((0, 3))), path, binary=binary)
    assert len(read_cloud(path)) == 0


@pytest.mark.parametrize("fmt, binary", FORMATS)
def test_three_points_with_colors(tmp_path, fmt, binary):
    c = PointCloud([[0, 0, 0], [1, 2, 3], [-0.5, 0.25, 8]], [[255, 0, 0], [0, 255, 0], [1, 2, 3]])
    path = tmp_path / f"three.{fmt}"
    write_cloud(c, path, binary=binary)
    back = read_cloud(path)
    np.testing.assert_array_equal(back.points, c.points)
    np.testing.assert_array_equal(back.colors, c.colors)
    assert back.normals is None


@pytest.mark.parametrize("fmt, binary", FORMATS)
@pytest.mark.parametrize("colors, normals", [(False, False), (True, False), (False, True), (True, True)])
def test_round_trip_float32_exact(tmp_path, rng, fmt, binary, colors, normals):
    c = _cloud(rng, 257, colors, normals)
    path = tmp_path / f"c.{fmt}"
    write_cloud(c, path, binary=binary)
    back = read_cloud(path)
    assert len(back) == len(c)
    np.testing.assert_array_equal(back.points, c.points.astype(np.float32).astype(np.float64))
    if colors:
        np.testing.assert_array_equal(back.colors, c.colors)
    if normals:
        np.testing.assert_array_equal(back.normals, c.normals.astype(np.float32).astype(np.float64))


@pytest.mark.parametrize("name", ["cube_ascii.ply", "cube_binary.ply"])
def test_reads_externally_written_ply(name):
    # fixtures written by plyfile, see data/make_cube_ply.py
    c = read_cloud(DATA / name)
    assert len(c) == 8
    assert {tuple(p) for p in c.points} == {(x, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)}


def test_reads_pcl_style_ascii_pcd(tmp_path):
    text = (
        "# .PCD v0.7 - Point Cloud Data file format\nVERSION 0.7\nFIELDS x y z rgb\n"
        "SIZE 4 4 4 4\nTYPE F F F U\nCOUNT 1 1 1 1\nWIDTH 2\nHEIGHT 1\n"
        "VIEWPOINT 0 0 0 1 0 0 0\nPOINTS 2\nDATA ascii\n"
        f"0.5 1 2 {(255 << 16) | (128 << 8) | 7}\n3 4 5 0\n"
    )
    path = tmp_path / "pcl.pcd"
    path.write_text(text)
    c = read_cloud(path)
    np.testing.assert_array_equal(c.points, [[0.5, 1, 2], [3, 4, 5]])
    np.testing.assert_array_equal(c.colors, [[255, 128, 7], [0, 0, 0]])


def test_truncated_binary_payload_reports_offset(tmp_path, rng):
    path = tmp_path / "t.pcd"
    write_cloud(_cloud(rng, 10), path, binary=True)
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(CloudFormatError, match="truncated.*byte offset"):
        read_cloud(path)


def test_truncated_ply(tmp_path, rng):
    path = tmp_path / "t.ply"
    write_cloud(_cloud(rng, 10), path, binary=True)
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(CloudFormatError, match="truncated"):
        read_cloud(path)


def test_unsupported_field(tmp_path):
    path = tmp_path / "u.pcd"
    path.write_text("VERSION 0.7\nFIELDS x y z intensity\nSIZE 4 4 4 4\nTYPE F F F F\n"
                    "COUNT 1 1 1 1\nWIDTH 0\nHEIGHT 1\nPOINTS 0\nDATA ascii\n")
    with pytest.raises(CloudFormatError, match="unsupported PCD fields.*byte offset"):
        read_cloud(path)


def test_malformed_headers(tmp_path):
    bad = tmp_path / "bad.ply"
    bad.write_bytes(b"plz\n")
    with pytest.raises(CloudFormatError, match="magic"):
        read_cloud(bad)
    bad.write_bytes(b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(CloudFormatError, match="unsupported PLY format"):
        read_cloud(bad)
    noend = tmp_path / "n.pcd"
    noend.write_bytes(b"VERSION 0.7\nFIELDS x y z")
    with pytest.raises(CloudFormatError, match="unterminated header"):
        read_cloud(noend)
    compressed = tmp_path / "c.pcd"
    compressed.write_text("FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nPOINTS 0\nDATA binary_compressed\n")
    with pytest.raises(CloudFormatError, match="encoding"):
        read_cloud(compressed)


def test_ascii_row_errors(tmp_path):
    path = tmp_path / "r.ply"
    path.write_text("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                    "property float z\nend_header\n1 2 3\n4 five 6\n")
    with pytest.raises(CloudFormatError, match="row 1"):
        read_cloud(path)


def test_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        write_cloud(PointCloud(np.zeros((1, 3))), tmp_path / "x.xyz")
