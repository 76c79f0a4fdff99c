"""Shared synthetic fixtures."""

from functools import lru_cache

import numpy as np

from fruitshape.cloud import PointCloud
from fruitshape.scene import axis_views, render_frame
from fruitshape.se_core import Superellipsoid
from fruitshape.segment import mask_to_cloud
from fruitshape.tsdf import PosedCloud, TsdfConfig, TsdfGrid, integrate

SPHERE_CENTER = np.array([0.013, -0.021, 0.007])
SPHERE_RADIUS = 0.05


def sphere_scans(distance=0.5, size=240, focal=500.0):
    """Sensor-frame clouds of a 5 cm sphere seen from the six axis views."""
    s = Superellipsoid(SPHERE_RADIUS, SPHERE_RADIUS, SPHERE_RADIUS, 1.0, 1.0, tuple(SPHERE_CENTER))
    out = []
    for pose in axis_views(distance, SPHERE_CENTER):
        frame, owner = render_frame([s], pose, size, size, focal)
        out.append(PosedCloud(mask_to_cloud(frame, owner >= 0, world=False), pose))
    return out


@lru_cache(maxsize=None)
def fused_sphere():
    grid = TsdfGrid(TsdfConfig())
    for obs in sphere_scans():
        integrate(grid, obs)
    return grid


def ball(rng, n, center, radius):
    """``n`` points uniform in a ball."""
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / 3.0)
    return PointCloud(np.asarray(center) + d * r[:, None])


def with_estimated_center(points, k=30, lam=2.5):
    """Cluster with PCA normals and the normal-line center, as the pipeline
    builds it."""
    from fruitshape.cloud import estimate_normals
    from fruitshape.segment import Cluster, estimate_center

    cloud = estimate_normals(PointCloud(points), min(k, len(points) - 1))
    cl = Cluster(cloud, np.arange(len(points)))
    return cl.with_center(estimate_center(cl, lam))


FRUIT_AXES = (0.035, 0.055)
FRUIT_EPS = (0.4, 0.9)


def random_fruit(rng, axes=FRUIT_AXES, eps=FRUIT_EPS, region=0.3):
    """Ground-truth shape drawn like the synthetic scenes draw fruits."""
    from fruitshape.scene import _random_rotation
    from fruitshape.se_core import Superellipsoid

    return Superellipsoid(*rng.uniform(*axes, 3), *rng.uniform(*eps, 2),
                          tuple(rng.uniform(-region, region, 3)), _random_rotation(rng))


def half_surface_points(shape, rng, noise=0.001, res=40):
    """Surface samples on one side of a random plane through the center."""
    from fruitshape.se_core import sample_surface

    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    pts = sample_surface(shape, res)
    pts = pts[(pts - shape.center) @ n >= 0]
    return pts + rng.normal(0, noise, pts.shape)
