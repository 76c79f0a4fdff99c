"""Fruit pixel detection, back-projection, Euclidean clustering and
normal-based center estimation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .cloud import KnnIndex, PointCloud


@dataclass(frozen=True, eq=False)
class RgbdFrame:
    color: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) meters, 0 or NaN where invalid
    fx: float
    fy: float
    cx: float
    cy: float
    sensor_pose: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        color = np.asarray(self.color, dtype=np.uint8)
        depth = np.asarray(self.depth, dtype=np.float64)
        if color.ndim != 3 or color.shape[2] != 3:
            raise ValueError("color must be an (H, W, 3) image")
        if depth.shape != color.shape[:2]:
            raise ValueError(f"depth shape {depth.shape} differs from color {color.shape[:2]}")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        object.__setattr__(self, "color", color)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "sensor_pose", np.asarray(self.sensor_pose, dtype=float))

    @property
    def shape(self):
        return self.depth.shape


@dataclass(frozen=True)
class ColorThreshold:
    """Red band in HSV; hue in degrees, saturation/value in [0, 1]."""

    hue_low: float = 20.0
    hue_high: float = 340.0
    min_saturation: float = 0.5
    min_value: float = 0.2


@dataclass(frozen=True)
class ClusterParams:
    tolerance: float = 0.01
    min_size: int = 100
    max_size: int = 10000
    lam: float = 2.5

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.min_size <= self.max_size:
            raise ValueError("need 0 < min_size <= max_size")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")


@dataclass(frozen=True, eq=False)
class Cluster:
    points: PointCloud
    indices: np.ndarray
    center: np.ndarray | None = None

    def __len__(self):
        return len(self.points)

    def with_center(self, w) -> Cluster:
        return replace(self, center=np.asarray(w, dtype=float))


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorised RGB (uint8 or [0,1] floats) to HSV with hue in degrees."""
    rgb = np.asarray(rgb)
    if rgb.dtype == np.uint8:
        rgb = rgb / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(mx > 0, delta / mx, 0.0)
        safe = np.where(delta > 0, delta, 1.0)
        h = np.where(mx == r, ((g - b) / safe) % 6.0,
                     np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    h = np.where(delta > 0, h * 60.0, 0.0)
    return np.stack([h, s, mx], axis=-1)


def threshold_mask(frame: RgbdFrame, thr: ColorThreshold = ColorThreshold()) -> np.ndarray:
    hsv = rgb_to_hsv(frame.color)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    red_hue = (h <= thr.hue_low) | (h >= thr.hue_high)
    return red_hue & (s >= thr.min_saturation) & (v >= thr.min_value)


def mask_to_cloud(frame: RgbdFrame, mask: np.ndarray, world: bool = True) -> PointCloud:
    """Back-project masked pixels with valid depth through the pinhole model.

    Pixel ``(u, v)`` is column ``u``, row ``v``. Points are returned in world
    frame (via ``frame.sensor_pose``) unless ``world`` is False.
    """
    mask = np.asarray(mask, dtype=bool)
    z = frame.depth
    valid = mask & np.isfinite(z) & (z > 0)
    v, u = np.nonzero(valid)
    z = z[v, u]
    pts = np.stack([(u - frame.cx) * z / frame.fx, (v - frame.cy) * z / frame.fy, z], axis=1)
    if world:
        T = frame.sensor_pose
        pts = pts @ T[:3, :3].T + T[:3, 3]
    return PointCloud(pts, frame.color[v, u], frame="world" if world else "sensor")


def euclidean_cluster(cloud: PointCloud, params: ClusterParams = ClusterParams()) -> list[Cluster]:
    """Connected components of the graph linking points within ``tolerance``,
    keeping those with ``min_size <= size <= max_size``.

    Clusters are ordered by their smallest point index.
    """
    n = len(cloud)
    if n == 0:
        return []
    pairs = KnnIndex(cloud).pairs_within(params.tolerance)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    order = np.argsort(labels, kind="stable")
    bounds = np.flatnonzero(np.diff(labels[order])) + 1
    clusters = []
    for idx in np.split(order, bounds):
        if params.min_size <= len(idx) <= params.max_size:
            clusters.append(Cluster(cloud.select(idx), idx))
    clusters.sort(key=lambda c: int(c.indices[0]))
    return clusters


def estimate_center(cluster: Cluster | PointCloud, lam: float = 2.5) -> np.ndarray:
    """Regularised least-squares intersection of the normal lines.

    Solves ``(sum(I - n n^T) + lam I) w = sum(I - n n^T) p + lam * mean(p)``
    over points with valid normals; the mean runs over all points.
    """
    cloud = cluster.points if isinstance(cluster, Cluster) else cluster
    if cloud.normals is None:
        raise ValueError("no usable normals")
    ok = cloud.normal_valid
    if not ok.any():
        raise ValueError("no usable normals")
    p = cloud.points[ok]
    nrm = cloud.normals[ok]
    nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
    proj = np.eye(3)[None] - nrm[:, :, None] * nrm[:, None, :]
    A = proj.sum(axis=0) + lam * np.eye(3)
    rhs = np.einsum("nij,nj->i", proj, p) + lam * cloud.points.mean(axis=0)
    if abs(np.linalg.det(A)) < 1e-18:
        raise np.linalg.LinAlgError("center system is singular")
    return np.linalg.solve(A, rhs)
