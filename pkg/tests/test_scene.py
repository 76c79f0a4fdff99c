import numpy as np
import pytest

from fruitshape.scene import (
    FRUIT_RGB,
    LEAF_RGB,
    GroundTruthFruit,
    SceneSpec,
    axis_views,
    generate_scene,
    look_at,
    ray_hits,
    render_frame,
    render_scene,
    ring_views,
)
from fruitshape.se_core import Superellipsoid, radial_distance, to_local
from fruitshape.segment import mask_to_cloud, threshold_mask

SMALL = dict(width=160, height=120, focal=140.0)


def test_look_at_is_rigid_and_points_at_target():
    T = look_at((1.0, 2.0, 0.5), (0.0, 0.0, 0.0))
    R = T[:3, :3]
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)
    fwd = -np.array([1.0, 2.0, 0.5]) / np.linalg.norm([1.0, 2.0, 0.5])
    np.testing.assert_allclose(R[:, 2], fwd, atol=1e-12)
    # straight down still yields a valid frame
    T = look_at((0, 0, 1), (0, 0, 0))
    np.testing.assert_allclose(T[:3, :3] @ T[:3, :3].T, np.eye(3), atol=1e-12)


def test_view_helpers():
    assert len(ring_views(6, 1.0, (0.3, -0.2))) == 6
    views = axis_views(0.5, (0.1, 0, 0))
    assert len(views) == 6
    for T in views:
        assert np.linalg.norm(T[:3, 3] - [0.1, 0, 0]) == pytest.approx(0.5)


def test_ray_hits_sphere_analytic():
    s = Superellipsoid(0.05, 0.05, 0.05, 1.0, 1.0, (0.0, 0.0, 1.0))
    dirs = np.array([[0.0, 0.0, 1.0], [0.03, 0.0, 1.0], [1.0, 0.0, 0.0]])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t = ray_hits(s, (0, 0, 0), dirs)
    assert t[0] == pytest.approx(0.95, abs=1e-9)
    # ray at angle theta from the center direction hits at cos - sqrt(r^2 - sin^2)
    th = np.arctan(0.03)
    assert t[1] == pytest.approx(np.cos(th) - np.sqrt(0.05**2 - np.sin(th) ** 2), abs=1e-9)
    assert np.isinf(t[2])


def test_ray_hits_lie_on_superellipsoid(rng):
    s = Superellipsoid(0.05, 0.04, 0.06, 0.4, 0.9, (0.1, 0.0, 0.8), (0.3, -0.4, 1.0))
    dirs = s.center + rng.normal(0, 0.03, (500, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t = ray_hits(s, (0, 0, 0), dirs)
    hit = np.isfinite(t)
    assert hit.sum() > 100
    pts = t[hit, None] * dirs[hit]
    assert np.max(radial_distance(s, to_local(s, pts))) < 1e-9


def test_head_on_view_back_projects_onto_surface():
    s = Superellipsoid(0.05, 0.04, 0.06, 0.5, 0.7, (0.0, 0.0, 0.0), (0.2, 0.4, 0.1))
    frame, owner = render_frame([s], look_at((0.5, 0.0, 0.0), (0.0, 0.0, 0.0)), **{
        "width": 200, "height": 160, "fx": 300.0})
    cloud = mask_to_cloud(frame, threshold_mask(frame))
    assert len(cloud) > 1000
    assert np.max(radial_distance(s, to_local(s, cloud.points))) < 1e-3


def test_zero_fruits_no_red():
    sc = generate_scene(SceneSpec(n_fruits=0, n_views=3, **SMALL))
    assert sc.fruits == []
    for f in sc.frames:
        assert not threshold_mask(f).any()


def test_same_seed_bitwise_identical():
    spec = SceneSpec(n_fruits=3, n_views=2, seed=11, **SMALL)
    a, b = generate_scene(spec), generate_scene(spec)
    assert [f.shape for f in a.fruits] == [f.shape for f in b.fruits]
    for fa, fb in zip(a.frames, b.frames):
        assert fa.color.tobytes() == fb.color.tobytes()
        assert fa.depth.tobytes() == fb.depth.tobytes()
    c = generate_scene(SceneSpec(n_fruits=3, n_views=2, seed=12, **SMALL))
    assert c.frames[0].depth.tobytes() != a.frames[0].depth.tobytes()


def test_sampled_fruits_respect_ranges():
    spec = SceneSpec(n_fruits=8, n_views=1, seed=4, **SMALL)
    sc = generate_scene(spec)
    for f in sc.fruits:
        assert all(spec.axis_range[0] <= v <= spec.axis_range[1] for v in f.shape.axes)
        assert spec.eps1_range[0] <= f.shape.eps1 <= spec.eps1_range[1]
        assert np.all(np.abs(f.shape.center) <= spec.region)
        assert f.occlusion == pytest.approx(0.3)
    centers = np.array([f.shape.center for f in sc.fruits])
    d = np.linalg.norm(centers[:, None] - centers[None], axis=2)
    assert d[np.triu_indices(len(centers), 1)].min() > 2 * spec.axis_range[0]


def test_occlusion_colors_leaf():
    s = Superellipsoid(0.05, 0.05, 0.05, 1.0, 1.0)
    pose = look_at((0.6, 0, 0), (0, 0, 0))
    clear, _ = render_frame([GroundTruthFruit(s, "f", (0, 0, 1), 0.0)], pose, 120, 120, 300.0)
    half, _ = render_frame([GroundTruthFruit(s, "f", (0, 0, 1), 0.5)], pose, 120, 120, 300.0)
    red = np.all(clear.color == FRUIT_RGB, axis=-1)
    leaf = np.all(half.color == LEAF_RGB, axis=-1)
    assert leaf.sum() == pytest.approx(0.5 * red.sum(), rel=0.05)
    np.testing.assert_array_equal(clear.depth, half.depth)


def test_depth_noise_statistics():
    s = Superellipsoid(0.08, 0.08, 0.08, 1.0, 1.0)
    pose = look_at((0.6, 0, 0), (0, 0, 0))
    clean, _ = render_frame([s], pose, 120, 120, 300.0)
    noisy, _ = render_frame([s], pose, 120, 120, 300.0, depth_noise=0.002, rng=np.random.default_rng(0))
    hit = clean.depth > 0
    diff = (noisy.depth - clean.depth)[hit]
    assert abs(diff.mean()) < 2e-4
    assert 0.0015 < diff.std() < 0.0021


def test_unobserved_fruit_flagged():
    far = Superellipsoid(0.05, 0.05, 0.05, 1, 1, (0.0, 0.0, 5.0))
    near = Superellipsoid(0.05, 0.05, 0.05, 1, 1)
    sc = render_scene([near, far], SceneSpec(n_views=2, view_elevations=(0.0,), **SMALL))
    assert sc.unobserved == ["fruit_1"]


def test_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(axis_range=(0.05, 0.04))
    with pytest.raises(ValueError):
        SceneSpec(eps1_range=(0.5, 2.5))
    with pytest.raises(ValueError):
        SceneSpec(occlusion_range=(0.2, 1.2))
