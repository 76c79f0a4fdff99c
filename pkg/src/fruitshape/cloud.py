"""Point cloud container, nearest-neighbour index, statistical outlier removal
and PCA normal estimation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree


class SmallCloudWarning(UserWarning):
    """Raised (as a warning) when a filter cannot run on a too-small cloud."""


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Immutable set of 3D points with optional RGB colors and normals.

    Invalid normals (degenerate neighbourhoods) are stored as NaN rows; use
    :attr:`normal_valid` to select the usable ones.
    """

    points: np.ndarray
    colors: np.ndarray | None = None
    normals: np.ndarray | None = None
    frame: str = "world"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            col = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(col) != len(pts):
                raise ValueError(f"colors has {len(col)} rows for {len(pts)} points")
            col.setflags(write=False)
            object.__setattr__(self, "colors", col)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(nrm) != len(pts):
                raise ValueError(f"normals has {len(nrm)} rows for {len(pts)} points")
            nrm.setflags(write=False)
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def normal_valid(self) -> np.ndarray:
        if self.normals is None:
            return np.zeros(len(self), dtype=bool)
        return np.all(np.isfinite(self.normals), axis=1)

    def select(self, idx) -> PointCloud:
        """Subset by boolean mask or index array (order follows ``idx``)."""
        return PointCloud(
            self.points[idx],
            None if self.colors is None else self.colors[idx],
            None if self.normals is None else self.normals[idx],
            self.frame,
        )

    def with_normals(self, normals) -> PointCloud:
        return replace(self, normals=normals)

    def with_colors(self, colors) -> PointCloud:
        return replace(self, colors=colors)

    @staticmethod
    def concat(clouds, frame: str = "world") -> PointCloud:
        clouds = list(clouds)
        if not clouds:
            return PointCloud(np.empty((0, 3)), frame=frame)
        pts = np.vstack([c.points for c in clouds])
        cols = None
        if all(c.colors is not None for c in clouds):
            cols = np.vstack([c.colors for c in clouds])
        nrms = None
        if all(c.normals is not None for c in clouds):
            nrms = np.vstack([c.normals for c in clouds])
        return PointCloud(pts, cols, nrms, frame)


class KnnIndex:
    """k-d tree over the positions of a cloud (or a raw ``(N, 3)`` array)."""

    def __init__(self, cloud):
        pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
        self.points = pts
        self._tree = cKDTree(pts) if len(pts) else None

    def __len__(self):
        return len(self.points)

    def query(self, q, k: int):
        """Distances and indices of the ``min(k, N)`` nearest points, ascending."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        k = min(int(k), len(self.points))
        if k <= 0:
            return np.empty((len(q), 0)), np.empty((len(q), 0), dtype=np.intp)
        d, i = self._tree.query(q, k=k)
        if k == 1:
            d, i = d[:, None], i[:, None]
        return d, i

    def query_radius(self, q, r: float):
        if self._tree is None:
            return [[] for _ in np.atleast_2d(q)]
        return self._tree.query_ball_point(np.atleast_2d(q), r)

    def pairs_within(self, r: float) -> np.ndarray:
        """All index pairs ``(i, j), i < j`` with distance <= r."""
        if self._tree is None:
            return np.empty((0, 2), dtype=np.intp)
        return self._tree.query_pairs(r, output_type="ndarray")


def statistical_outlier_removal(cloud: PointCloud, mean_k: int = 50, stddev_mult: float = 1.0) -> PointCloud:
    """Drop points whose mean distance to their ``mean_k`` neighbours exceeds
    the global mean of that statistic by more than ``stddev_mult`` standard
    deviations. Order of the kept points is preserved."""
    if mean_k < 1:
        raise ValueError("mean_k must be >= 1")
    n = len(cloud)
    if n == 0:
        raise ValueError("statistical_outlier_removal needs a non-empty cloud")
    if n < mean_k + 1:
        warnings.warn(
            f"cloud has {n} points, fewer than mean_k+1={mean_k + 1}; returned unchanged",
            SmallCloudWarning,
            stacklevel=2,
        )
        return cloud
    d, _ = KnnIndex(cloud).query(cloud.points, mean_k + 1)
    mean_d = d[:, 1:].mean(axis=1)
    mu = mean_d.mean()
    sigma = mean_d.std()
    # slack absorbs round-off when every point has the same neighbour spacing
    threshold = mu + stddev_mult * sigma + 1e-9 * mu
    keep = mean_d <= threshold
    keep[np.argmin(mean_d)] = True
    return cloud.select(keep)


def estimate_normals(cloud: PointCloud, k: int = 30, rank_tol: float = 1e-10) -> PointCloud:
    """PCA normals from each point and its ``k`` nearest neighbours.

    The normal is the covariance eigenvector with the smallest eigenvalue,
    oriented away from the cloud centroid. Neighbourhoods of rank < 2 yield a
    NaN normal.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    n = len(cloud)
    if n < k + 1:
        raise ValueError(f"estimate_normals needs at least k+1={k + 1} points, got {n}")
    pts = cloud.points
    _, idx = KnnIndex(cloud).query(pts, k + 1)
    nb = pts[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / (k + 1)
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()
    scale = np.maximum(evals[:, 2], np.finfo(float).tiny)
    degenerate = evals[:, 1] <= rank_tol * scale
    outward = pts - pts.mean(axis=0)
    flip = np.einsum("ij,ij->i", normals, outward) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    normals[degenerate] = np.nan
    return cloud.with_normals(normals)
