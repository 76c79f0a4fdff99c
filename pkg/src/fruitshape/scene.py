"""Synthetic RGB-D scenes of superellipsoid fruits.

Depth is rendered by casting one ray per pixel against every fruit. Inside
the fruit's bounding box the gauge ``f ** (eps1 / 2)`` is convex along a ray
(all exponents here are < 2), so its minimum is found by golden-section
search and the entry point by bisection between the box entry and that
minimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .se_core import Superellipsoid, implicit_value, sample_surface
from .segment import RgbdFrame

FRUIT_RGB = (200, 15, 20)
LEAF_RGB = (40, 140, 45)
BACKGROUND_RGB = (128, 128, 128)

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class GroundTruthFruit:
    shape: Superellipsoid
    id: str
    occluder_normal: tuple[float, float, float] = (0.0, 0.0, 1.0)
    occlusion: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    n_fruits: int = 10
    axis_range: tuple[float, float] = (0.035, 0.055)
    eps1_range: tuple[float, float] = (0.4, 0.9)
    eps2_range: tuple[float, float] = (0.4, 0.9)
    region: tuple[float, float, float] = (0.35, 0.35, 0.2)
    min_gap: float = 0.02
    n_views: int = 6
    view_distance: float = 1.0
    view_elevations: tuple[float, ...] = (0.35, -0.2)
    views: tuple | None = None
    occlusion_range: tuple[float, float] = (0.3, 0.3)
    depth_noise: float = 0.002
    width: int = 480
    height: int = 360
    focal: float = 420.0
    seed: int = 0

    def __post_init__(self):
        for lo, hi in (self.axis_range, self.eps1_range, self.eps2_range, self.occlusion_range):
            if lo > hi:
                raise ValueError("parameter ranges must be ordered (low, high)")
        if not 0 < self.axis_range[0]:
            raise ValueError("semi-axes must be positive")
        if not (0 < self.eps1_range[0] and self.eps1_range[1] < 2 and 0 < self.eps2_range[0] and self.eps2_range[1] < 2):
            raise ValueError("exponents must lie in (0, 2) for the renderer")
        if not 0 <= self.occlusion_range[0] <= self.occlusion_range[1] <= 1:
            raise ValueError("occlusion fractions must lie in [0, 1]")
        if self.depth_noise < 0 or self.n_fruits < 0:
            raise ValueError("depth_noise and n_fruits must be non-negative")


@dataclass
class Scene:
    fruits: list
    frames: list
    unobserved: list = field(default_factory=list)
    spec: SceneSpec | None = None


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Sensor-to-world pose for an optical frame (z forward, y down)."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, (1.0, 0.0, 0.0))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    T = np.eye(4)
    T[:3, :3] = np.stack([x, y, z], axis=1)
    T[:3, 3] = eye
    return T


def ring_views(n: int, distance: float, elevations=(0.0,), target=(0.0, 0.0, 0.0)) -> list[np.ndarray]:
    """``n`` poses evenly spaced in azimuth, cycling through ``elevations`` (rad)."""
    target = np.asarray(target, dtype=float)
    poses = []
    for k in range(n):
        az = 2.0 * np.pi * k / n
        el = elevations[k % len(elevations)]
        eye = target + distance * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        poses.append(look_at(eye, target))
    return poses


def axis_views(distance: float, target=(0.0, 0.0, 0.0)) -> list[np.ndarray]:
    """Six views looking at ``target`` along +-x, +-y, +-z."""
    target = np.asarray(target, dtype=float)
    poses = []
    for axis in range(3):
        for sign in (1.0, -1.0):
            eye = target.copy()
            eye[axis] += sign * distance
            poses.append(look_at(eye, target, up=(0.0, 0.0, 1.0) if axis != 2 else (0.0, 1.0, 0.0)))
    return poses


def _box_entry(o, d, half):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t_a = (-half - o) * inv
        t_b = (half - o) * inv
    t_lo = np.nanmax(np.minimum(t_a, t_b), axis=1)
    t_hi = np.nanmin(np.maximum(t_a, t_b), axis=1)
    return np.maximum(t_lo, 0.0), t_hi


def ray_hits(shape: Superellipsoid, origin, dirs, iters: int = 60):
    """First intersection distance of unit rays with the surface (inf on miss)."""
    origin = np.asarray(origin, dtype=float)
    dirs = np.asarray(dirs, dtype=float)
    R = shape.R
    o = (origin - shape.center) @ R
    d = dirs @ R
    t_hit = np.full(len(d), np.inf)
    t0, t1 = _box_entry(np.broadcast_to(o, d.shape), d, shape.axes)
    cand = np.flatnonzero(t1 > t0)
    if not len(cand):
        return t_hit
    dc = d[cand]
    e = shape.eps1 / 2.0

    def gauge(t, rows):
        return implicit_value(shape, o + t[:, None] * dc[rows]) ** e

    lo, hi = t0[cand].copy(), t1[cand].copy()
    rows = np.arange(len(cand))
    # golden-section minimum of the convex gauge on [lo, hi]
    a_, b_ = lo.copy(), hi.copy()
    x1 = b_ - _GOLDEN * (b_ - a_)
    x2 = a_ + _GOLDEN * (b_ - a_)
    f1, f2 = gauge(x1, rows), gauge(x2, rows)
    for _ in range(iters):
        left = f1 < f2
        b_ = np.where(left, x2, b_)
        a_ = np.where(left, a_, x1)
        x1n = np.where(left, b_ - _GOLDEN * (b_ - a_), x2)
        x2n = np.where(left, x1, a_ + _GOLDEN * (b_ - a_))
        fn = gauge(np.where(left, x1n, x2n), rows)
        f1, f2 = np.where(left, fn, f2), np.where(left, f1, fn)
        x1, x2 = x1n, x2n
    t_min = 0.5 * (a_ + b_)
    inside = gauge(t_min, rows) <= 1.0
    start_inside = gauge(lo, rows) <= 1.0
    lo_b, hi_b = lo.copy(), t_min.copy()
    for _ in range(iters):
        mid = 0.5 * (lo_b + hi_b)
        out = gauge(mid, rows) > 1.0
        lo_b = np.where(out, mid, lo_b)
        hi_b = np.where(out, hi_b, mid)
    t = np.where(start_inside, lo, 0.5 * (lo_b + hi_b))
    t_hit[cand[inside]] = t[inside]
    return t_hit


def _pixel_rays(width, height, fx, fy, cx, cy):
    v, u = np.mgrid[0:height, 0:width]
    d = np.stack([(u - cx) / fx, (v - cy) / fy, np.ones_like(u, dtype=float)], axis=-1).reshape(-1, 3)
    norm = np.linalg.norm(d, axis=1)
    return d / norm[:, None], 1.0 / norm


def render_frame(fruits, pose, width, height, fx, fy=None, cx=None, cy=None,
                 depth_noise=0.0, rng=None):
    """Ray-cast one RGB-D frame. Returns the frame and per-pixel fruit index
    (-1 for background)."""
    fy = fx if fy is None else fy
    cx = (width - 1) / 2.0 if cx is None else cx
    cy = (height - 1) / 2.0 if cy is None else cy
    pose = np.asarray(pose, dtype=float)
    d_cam, cos_axis = _pixel_rays(width, height, fx, fy, cx, cy)
    d_world = d_cam @ pose[:3, :3].T
    origin = pose[:3, 3]
    best = np.full(len(d_cam), np.inf)
    owner = np.full(len(d_cam), -1)
    for k, fruit in enumerate(fruits):
        shape = fruit.shape if isinstance(fruit, GroundTruthFruit) else fruit
        t = ray_hits(shape, origin, d_world)
        closer = t < best
        best[closer] = t[closer]
        owner[closer] = k
    color = np.empty((len(d_cam), 3), dtype=np.uint8)
    color[:] = BACKGROUND_RGB
    hit = np.isfinite(best)
    color[hit] = FRUIT_RGB
    for k, fruit in enumerate(fruits):
        if not isinstance(fruit, GroundTruthFruit) or fruit.occlusion <= 0:
            continue
        sel = np.flatnonzero(owner == k)
        p = origin + best[sel, None] * d_world[sel]
        q = (p - fruit.shape.center) @ fruit.shape.R / fruit.shape.axes
        hidden = q @ np.asarray(fruit.occluder_normal) > 1.0 - 2.0 * fruit.occlusion
        color[sel[hidden]] = LEAF_RGB
    t = best.copy()
    if depth_noise > 0 and hit.any():
        rng = np.random.default_rng() if rng is None else rng
        t[hit] += rng.normal(0.0, depth_noise, size=int(hit.sum()))
    depth = np.where(hit, t * cos_axis, 0.0)
    frame = RgbdFrame(color.reshape(height, width, 3), depth.reshape(height, width), fx, fy, cx, cy, pose)
    return frame, owner.reshape(height, width)


def _bounding_radius(shape: Superellipsoid) -> float:
    return float(np.linalg.norm(sample_surface(shape, 24, local=True), axis=1).max()) * 1.02


def _random_rotation(rng):
    # uniform on SO(3) via a random unit quaternion, expressed as Z-Y-X angles
    qw, qx, qy, qz = rng.normal(size=4)
    n = np.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    qw, qx, qy, qz = qw / n, qx / n, qy / n, qz / n
    phi = np.arctan2(2 * (qw * qz + qx * qy), 1 - 2 * (qy * qy + qz * qz))
    theta = np.arcsin(np.clip(2 * (qw * qy - qz * qx), -1.0, 1.0))
    psi = np.arctan2(2 * (qw * qx + qy * qz), 1 - 2 * (qx * qx + qy * qy))
    return (float(phi), float(theta), float(psi))


def sample_fruits(spec: SceneSpec, rng) -> list[GroundTruthFruit]:
    fruits, radii, centers = [], [], []
    region = np.asarray(spec.region, dtype=float)
    for k in range(spec.n_fruits):
        for _attempt in range(10000):
            a, b, c = rng.uniform(*spec.axis_range, size=3)
            shape = Superellipsoid(a, b, c, rng.uniform(*spec.eps1_range), rng.uniform(*spec.eps2_range),
                                   tuple(rng.uniform(-region, region)), _random_rotation(rng))
            r = _bounding_radius(shape)
            ok = all(np.linalg.norm(shape.center - c0) > r + r0 + spec.min_gap for c0, r0 in zip(centers, radii))
            if ok:
                break
        else:
            raise RuntimeError(f"could not place fruit {k}; region too small for {spec.n_fruits} fruits")
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        occ = float(rng.uniform(*spec.occlusion_range))
        fruits.append(GroundTruthFruit(shape, f"fruit_{k}", tuple(n), occ))
        radii.append(r)
        centers.append(shape.center)
    return fruits


def render_scene(fruits, spec: SceneSpec = SceneSpec(), rng=None) -> Scene:
    """Render every view of ``spec`` for the given fruits."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    fruits = [f if isinstance(f, GroundTruthFruit) else GroundTruthFruit(f, f"fruit_{k}")
              for k, f in enumerate(fruits)]
    views = list(spec.views) if spec.views is not None else ring_views(
        spec.n_views, spec.view_distance, spec.view_elevations)
    frames = []
    seen = np.zeros(len(fruits), dtype=bool)
    for pose in views:
        frame, owner = render_frame(fruits, pose, spec.width, spec.height, spec.focal,
                                    depth_noise=spec.depth_noise, rng=rng)
        frames.append(frame)
        seen[np.unique(owner[owner >= 0])] = True
    unobserved = [f.id for f, s in zip(fruits, seen) if not s]
    return Scene(fruits, frames, unobserved, spec)


def generate_scene(spec: SceneSpec) -> Scene:
    """Sample fruits and render every view. Deterministic for a given seed."""
    rng = np.random.default_rng(spec.seed)
    return render_scene(sample_fruits(spec, rng), spec, rng)
