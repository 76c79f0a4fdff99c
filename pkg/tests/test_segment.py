import colorsys
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from fixtures import ball
from fruitshape.cloud import PointCloud
from fruitshape.scene import look_at, render_frame
from fruitshape.se_core import Superellipsoid, radial_distance, to_local
from fruitshape.segment import (
    Cluster,
    ClusterParams,
    RgbdFrame,
    estimate_center,
    euclidean_cluster,
    mask_to_cloud,
    rgb_to_hsv,
    threshold_mask,
)


def _frame(pixels, depth=1.0):
    color = np.asarray(pixels, dtype=np.uint8).reshape(1, -1, 3)
    return RgbdFrame(color, np.full(color.shape[:2], depth), 100.0, 100.0, 0.0, 0.0)


@settings(max_examples=300)
@given(st.tuples(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255)))
def test_hsv_matches_colorsys(rgb):
    h, s, v = colorsys.rgb_to_hsv(*(c / 255.0 for c in rgb))
    got = rgb_to_hsv(np.array(rgb, dtype=np.uint8))
    assert got[1] == pytest.approx(s, abs=1e-12)
    assert got[2] == pytest.approx(v, abs=1e-12)
    if s > 0:
        assert got[0] == pytest.approx((h * 360.0) % 360.0, abs=1e-9)


def test_mask_examples():
    mask = threshold_mask(_frame([(255, 0, 0), (0, 255, 0), (60, 10, 10), (40, 8, 8), (255, 120, 120)]))
    # (60,10,10) has value 60/255 = 0.235, which clears the 0.2 floor;
    # (40,8,8) at 0.157 does not; (255,120,120) has saturation 0.53
    assert mask[0].tolist() == [True, False, True, False, True]


def test_dark_red_hsv_values():
    h, s, v = rgb_to_hsv(np.array([60, 10, 10], dtype=np.uint8))
    assert h == 0.0
    assert s == pytest.approx(50 / 60)
    assert v == pytest.approx(60 / 255)


def test_hue_band_edges():
    # hues 18.8, 21.2, 338.8 and 341.2 degrees
    mask = threshold_mask(_frame([(255, 80, 0), (255, 90, 0), (255, 0, 90), (255, 0, 80)]))
    assert mask[0].tolist() == [True, False, False, True]


def test_principal_point_back_projection():
    color = np.zeros((5, 7, 3), dtype=np.uint8)
    depth = np.ones((5, 7))
    frame = RgbdFrame(color, depth, 300.0, 310.0, 3.0, 2.0)
    mask = np.zeros((5, 7), dtype=bool)
    mask[2, 3] = True
    np.testing.assert_array_equal(mask_to_cloud(frame, mask).points, [[0.0, 0.0, 1.0]])


def test_back_projection_column_row_convention_and_pose():
    depth = np.full((4, 6), 2.0)
    pose = look_at((0.0, -1.0, 0.0), (0.0, 0.0, 0.0))
    frame = RgbdFrame(np.zeros((4, 6, 3)), depth, 100.0, 50.0, 1.0, 1.5, pose)
    mask = np.zeros((4, 6), dtype=bool)
    mask[3, 5] = True  # row 3, column 5
    local = mask_to_cloud(frame, mask, world=False).points[0]
    np.testing.assert_allclose(local, [(5 - 1.0) * 2 / 100, (3 - 1.5) * 2 / 50, 2.0])
    world = mask_to_cloud(frame, mask).points[0]
    np.testing.assert_allclose(world, pose[:3, :3] @ local + pose[:3, 3], atol=1e-15)


def test_invalid_depth_and_empty_mask():
    depth = np.array([[1.0, 0.0, np.nan]])
    frame = RgbdFrame(np.zeros((1, 3, 3)), depth, 1.0, 1.0, 0.0, 0.0)
    assert len(mask_to_cloud(frame, np.ones((1, 3), dtype=bool))) == 1
    assert len(mask_to_cloud(frame, np.zeros((1, 3), dtype=bool))) == 0


def test_rendered_sphere_back_projects_onto_surface():
    s = Superellipsoid(0.04, 0.04, 0.04, 1.0, 1.0, (0.02, 0.01, -0.03))
    frame, owner = render_frame([s], look_at((0.6, 0.0, 0.1), s.center), 160, 120, 300.0)
    cloud = mask_to_cloud(frame, threshold_mask(frame))
    assert len(cloud) == np.count_nonzero(owner >= 0) > 500
    err = np.abs(np.linalg.norm(cloud.points - s.center, axis=1) - 0.04)
    assert err.max() < 1e-6
    assert np.max(radial_distance(s, to_local(s, cloud.points))) < 1e-6


def test_frame_validation():
    with pytest.raises(ValueError):
        RgbdFrame(np.zeros((2, 2, 3)), np.zeros((2, 3)), 1, 1, 0, 0)
    with pytest.raises(ValueError):
        RgbdFrame(np.zeros((2, 2, 3)), np.zeros((2, 2)), 0, 1, 0, 0)


# -- clustering ----------------------------------------------------------


def _two_balls(rng, gap, radius=0.03, n=500):
    a = ball(rng, n, (0, 0, 0), radius)
    # shift so the closest possible pair sits exactly ``gap`` apart
    b = ball(rng, n, (2 * radius + gap, 0, 0), radius)
    return PointCloud.concat([a, b])


def test_two_separated_balls(rng):
    clusters = euclidean_cluster(_two_balls(rng, 0.05))
    assert [len(c) for c in clusters] == [500, 500]


def test_touching_balls_merge(rng):
    # each ball includes its pole facing the other, so the closest pair is
    # exactly the 0.005 m surface gap
    a = PointCloud.concat([ball(rng, 499, (0, 0, 0), 0.03), PointCloud([[0.03, 0, 0]])])
    b = PointCloud.concat([ball(rng, 499, (0.065, 0, 0), 0.03), PointCloud([[0.035, 0, 0]])])
    clusters = euclidean_cluster(PointCloud.concat([a, b]))
    assert len(clusters) == 1
    assert len(clusters[0]) == 1000


def test_small_blob_discarded(rng):
    blob = ball(rng, 50, (0, 0, 0), 0.01)
    assert euclidean_cluster(blob) == []
    big = ball(rng, 500, (1, 0, 0), 0.03)
    out = euclidean_cluster(PointCloud.concat([blob, big]))
    assert len(out) == 1 and len(out[0]) == 500


def test_size_bounds_inclusive():
    line = PointCloud(np.column_stack([np.arange(100) * 0.005, np.zeros(100), np.zeros(100)]))
    assert len(euclidean_cluster(line, ClusterParams(min_size=100, max_size=100))) == 1
    assert euclidean_cluster(line, ClusterParams(min_size=101)) == []
    assert euclidean_cluster(line, ClusterParams(min_size=1, max_size=99)) == []


def _bfs_components(pts, tol):
    n = len(pts)
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    adj = d <= tol
    label = -np.ones(n, dtype=int)
    comps = []
    for s in range(n):
        if label[s] >= 0:
            continue
        label[s] = len(comps)
        q, comp = deque([s]), [s]
        while q:
            i = q.popleft()
            for j in np.flatnonzero(adj[i] & (label < 0)):
                label[j] = len(comps)
                q.append(j)
                comp.append(j)
        comps.append(sorted(comp))
    return comps


def random_blob_scene(seed, n_max=2000):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 7))
    sizes = rng.integers(20, max(21, n_max // k), size=k)
    parts = [ball(rng, int(s), rng.uniform(-0.25, 0.25, 3), rng.uniform(0.01, 0.04)) for s in sizes]
    return PointCloud.concat(parts)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 150), st.integers(0, 300))
def test_clustering_equals_bfs(seed, min_size, extra):
    cloud = random_blob_scene(seed)
    params = ClusterParams(0.01, min_size, min_size + extra)
    got = [sorted(c.indices.tolist()) for c in euclidean_cluster(cloud, params)]
    want = [c for c in _bfs_components(cloud.points, 0.01) if min_size <= len(c) <= min_size + extra]
    assert sorted(got) == sorted(want)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_clustering_partition_and_separation(seed):
    cloud = random_blob_scene(seed)
    params = ClusterParams(0.01, 1, 10**6)
    clusters = euclidean_cluster(cloud, params)
    idx = np.concatenate([c.indices for c in clusters])
    assert len(idx) == len(np.unique(idx)) == len(cloud)
    for i, a in enumerate(clusters):
        np.testing.assert_array_equal(a.points.points, cloud.points[a.indices])
        for b in clusters[i + 1:]:
            d = np.linalg.norm(a.points.points[:, None] - b.points.points[None], axis=2)
            assert d.min() > 0.01


# -- center estimation ---------------------------------------------------


def _sphere_cluster(rng, n, center, radius, hemisphere=False, noise=0.0):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    if hemisphere:
        d[:, 2] = np.abs(d[:, 2])
    pts = np.asarray(center) + radius * d + rng.normal(0, noise, (n, 3))
    return Cluster(PointCloud(pts, normals=d), np.arange(n))


def _center_objective(w, p, n, lam):
    r = (w - p) - np.einsum("ij,ij->i", w - p, n)[:, None] * n
    return np.sum(r * r) + lam * np.sum((w - p.mean(axis=0)) ** 2)


def center_oracle(cluster, lam):
    """Iterative minimiser of the same regularised objective."""
    p, n = cluster.points.points, cluster.points.normals
    res = minimize(_center_objective, p.mean(axis=0), args=(p, n, lam), method="BFGS",
                   options={"gtol": 1e-14, "maxiter": 10000})
    return res.x


def test_center_exact_without_regularisation(rng):
    o = np.array([0.1, -0.2, 0.3])
    w = estimate_center(_sphere_cluster(rng, 300, o, 0.05), lam=0.0)
    np.testing.assert_allclose(w, o, atol=1e-9)


def test_center_large_lambda_tends_to_mean(rng):
    cl = _sphere_cluster(rng, 300, (0.1, 0.2, 0.3), 0.05, hemisphere=True)
    w = estimate_center(cl, lam=1e12)
    mean = cl.points.points.mean(axis=0)
    assert np.linalg.norm(w - mean) <= 1e-6 * np.linalg.norm(mean)


def test_center_half_sphere(rng):
    o = np.array([0.0, 0.1, 0.5])
    cl = _sphere_cluster(rng, 800, o, 0.05, hemisphere=True)
    w = estimate_center(cl, lam=2.5)
    np.testing.assert_allclose(w, center_oracle(cl, 2.5), atol=1e-7)
    assert np.linalg.norm(w - o) <= 0.005


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_center_sign_flip_invariance(seed):
    rng = np.random.default_rng(seed)
    cl = _sphere_cluster(rng, 200, rng.normal(0, 0.3, 3), 0.05, hemisphere=True, noise=0.002)
    flip = np.where(rng.random(200) < 0.5, -1.0, 1.0)
    flipped = Cluster(cl.points.with_normals(cl.points.normals * flip[:, None]), cl.indices)
    w0, w1 = estimate_center(cl), estimate_center(flipped)
    assert np.max(np.abs(w0 - w1)) < 1e-12


def test_center_lambda_monotone(rng):
    for _ in range(10):
        cl = _sphere_cluster(rng, 400, rng.normal(0, 0.2, 3), 0.05, hemisphere=True, noise=0.001)
        mean = cl.points.points.mean(axis=0)
        gaps = [np.linalg.norm(estimate_center(cl, lam) - mean) for lam in (0.0, 2.5, 25.0, 2500.0)]
        assert all(a >= b for a, b in zip(gaps, gaps[1:]))


def test_center_ignores_invalid_normals(rng):
    cl = _sphere_cluster(rng, 300, (0, 0, 0), 0.05)
    nrm = cl.points.normals.copy()
    nrm[:10] = np.nan
    bad = Cluster(cl.points.with_normals(nrm), cl.indices)
    good = Cluster(PointCloud(cl.points.points[10:], normals=cl.points.normals[10:]), cl.indices[10:])
    # the regularising mean still runs over every point
    mean_all = cl.points.points.mean(axis=0)
    p, n = good.points.points, good.points.normals
    proj = np.eye(3) - n[:, :, None] * n[:, None, :]
    expected = np.linalg.solve(proj.sum(0) + 2.5 * np.eye(3),
                               np.einsum("nij,nj->i", proj, p) + 2.5 * mean_all)
    np.testing.assert_allclose(estimate_center(bad), expected, atol=1e-14)


def test_center_without_normals_fails():
    pts = PointCloud(np.random.default_rng(0).random((10, 3)))
    with pytest.raises(ValueError, match="no usable normals"):
        estimate_center(pts)
    with pytest.raises(ValueError, match="no usable normals"):
        estimate_center(pts.with_normals(np.full((10, 3), np.nan)))
