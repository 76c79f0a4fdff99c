"""Block-hashed truncated signed distance field.

Observations are masked fruit clouds with a known sensor pose. Every point
updates the voxels its viewing ray passes within the truncation band; the
signed distance is measured along the ray (positive in front of the
surface, towards the sensor).
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud

_MAGIC = b"FSTSDF\x00\x01"
_VERSION = 1


@dataclass(frozen=True)
class TsdfConfig:
    voxel_size: float = 0.004
    voxels_per_side: int = 64
    truncation_distance: float = 0.016
    max_weight: float = 10000.0
    min_weight: float = 0.5

    def __post_init__(self):
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        vps = self.voxels_per_side
        if vps < 1 or vps & (vps - 1):
            raise ValueError("voxels_per_side must be a power of two")
        if self.truncation_distance < self.voxel_size:
            raise ValueError("truncation_distance must be >= voxel_size")
        if not self.max_weight > 0:
            raise ValueError("max_weight must be positive")

    @property
    def block_size(self) -> float:
        return self.voxel_size * self.voxels_per_side


@dataclass(frozen=True)
class PosedCloud:
    """Cloud in sensor frame plus the 4x4 sensor-to-world transform."""

    cloud: PointCloud
    sensor_pose: np.ndarray

    def __post_init__(self):
        T = np.asarray(self.sensor_pose, dtype=float)
        if T.shape != (4, 4):
            raise ValueError("sensor_pose must be a 4x4 matrix")
        R = T[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or np.linalg.det(R) < 0:
            raise ValueError("sensor_pose rotation is not orthonormal")
        object.__setattr__(self, "sensor_pose", T)

    @property
    def origin(self) -> np.ndarray:
        return self.sensor_pose[:3, 3]

    def world_points(self) -> np.ndarray:
        T = self.sensor_pose
        # non-finite input rows stay non-finite; integrate() skips them
        with np.errstate(invalid="ignore"):
            return self.cloud.points @ T[:3, :3].T + T[:3, 3]


def observation_weight(points: np.ndarray, origin: np.ndarray) -> np.ndarray:
    """Per-point integration weight (constant)."""
    return np.ones(len(points))


@dataclass
class TsdfGrid:
    config: TsdfConfig = field(default_factory=TsdfConfig)
    blocks: dict = field(default_factory=dict)
    skipped_points: int = 0

    def copy(self) -> TsdfGrid:
        return copy.deepcopy(self)

    def _block(self, key):
        blk = self.blocks.get(key)
        if blk is None:
            n = self.config.voxels_per_side
            blk = (np.zeros((n, n, n)), np.zeros((n, n, n)))
            self.blocks[key] = blk
        return blk

    def voxel_center(self, ijk) -> np.ndarray:
        return (np.asarray(ijk, dtype=float) + 0.5) * self.config.voxel_size

    def voxels(self, min_weight: float = 0.0):
        """Global voxel indices ``(M, 3)``, tsdf ``(M,)`` and weight ``(M,)``
        of every voxel with weight > ``min_weight``."""
        n = self.config.voxels_per_side
        idx, tsdf, weight = [], [], []
        for key in sorted(self.blocks):
            d, w = self.blocks[key]
            local = np.argwhere(w > min_weight)
            if not len(local):
                continue
            idx.append(local + np.asarray(key) * n)
            tsdf.append(d[tuple(local.T)])
            weight.append(w[tuple(local.T)])
        if not idx:
            return np.empty((0, 3), dtype=np.int64), np.empty(0), np.empty(0)
        return np.vstack(idx).astype(np.int64), np.concatenate(tsdf), np.concatenate(weight)

    def lookup(self, ijk):
        """tsdf and weight at global voxel indices (0 weight if unallocated)."""
        ijk = np.atleast_2d(np.asarray(ijk, dtype=np.int64))
        n = self.config.voxels_per_side
        bk = np.floor_divide(ijk, n)
        loc = ijk - bk * n
        d = np.zeros(len(ijk))
        w = np.zeros(len(ijk))
        for i, (b, l) in enumerate(zip(map(tuple, bk), loc)):
            blk = self.blocks.get(b)
            if blk is not None:
                d[i] = blk[0][tuple(l)]
                w[i] = blk[1][tuple(l)]
        return d, w


def _ray_samples(points, origin, cfg):
    """Voxel indices visited by each point's ray within +-truncation."""
    vs, trunc = cfg.voxel_size, cfg.truncation_distance
    dirs = points - origin
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    step = vs / 2.0
    k = int(np.ceil(trunc / step))
    offsets = np.arange(-k, k + 1) * step
    samples = points[:, None, :] + offsets[None, :, None] * dirs[:, None, :]
    ijk = np.floor(samples / vs).astype(np.int64)
    centers = (ijk + 0.5) * vs
    sdf = np.einsum("nkj,nj->nk", points[:, None, :] - centers, dirs)
    pid = np.broadcast_to(np.arange(len(points))[:, None], sdf.shape)
    ijk = ijk.reshape(-1, 3)
    sdf = sdf.ravel()
    pid = pid.ravel()
    # the same voxel can be hit by two consecutive samples of one ray
    key = np.concatenate([pid[:, None], ijk], axis=1)
    _, first = np.unique(key, axis=0, return_index=True)
    first.sort()
    return ijk[first], sdf[first], pid[first]


def integrate(grid: TsdfGrid, obs: PosedCloud) -> TsdfGrid:
    """Fuse one observation in place and return the grid."""
    cfg = grid.config
    pts = obs.world_points()
    finite = np.all(np.isfinite(pts), axis=1)
    grid.skipped_points += int(np.count_nonzero(~finite))
    pts = pts[finite]
    if not len(pts):
        return grid
    origin = obs.origin
    ijk, sdf, pid = _ray_samples(pts, origin, cfg)
    trunc = cfg.truncation_distance
    sdf = np.clip(sdf, -trunc, trunc)
    w_obs = observation_weight(pts, origin)[pid]

    uniq, inv = np.unique(ijk, axis=0, return_inverse=True)
    inv = inv.ravel()
    sum_w = np.bincount(inv, weights=w_obs, minlength=len(uniq))
    sum_ws = np.bincount(inv, weights=w_obs * sdf, minlength=len(uniq))

    n = cfg.voxels_per_side
    bkeys = np.floor_divide(uniq, n)
    local = uniq - bkeys * n
    order = np.lexsort(bkeys.T[::-1])
    bkeys, local, sum_w, sum_ws = bkeys[order], local[order], sum_w[order], sum_ws[order]
    change = np.flatnonzero(np.any(np.diff(bkeys, axis=0) != 0, axis=1)) + 1
    for lo, hi in zip(np.r_[0, change], np.r_[change, len(bkeys)]):
        d, w = grid._block(tuple(int(v) for v in bkeys[lo]))
        sl = tuple(local[lo:hi].T)
        w_old = w[sl]
        w_tot = w_old + sum_w[lo:hi]
        d[sl] = np.clip((w_old * d[sl] + sum_ws[lo:hi]) / w_tot, -trunc, trunc)
        w[sl] = np.minimum(w_tot, cfg.max_weight)
    return grid


def extract_surface(grid: TsdfGrid, min_weight: float | None = None) -> PointCloud:
    """Zero crossings between face-adjacent observed voxels.

    One point per sign-changing voxel pair, linearly interpolated between the
    two voxel centers.
    """
    cfg = grid.config
    if min_weight is None:
        min_weight = cfg.min_weight
    ijk, d, _ = grid.voxels(min_weight)
    if not len(ijk):
        return PointCloud(np.empty((0, 3)))
    base = ijk.min(axis=0) - 1
    span = ijk.max(axis=0) - base + 2
    rel = ijk - base
    keys = (rel[:, 0] * span[1] + rel[:, 1]) * span[2] + rel[:, 2]
    order = np.argsort(keys)
    keys, ijk, d = keys[order], ijk[order], d[order]
    out = []
    for stride in (span[1] * span[2], span[2], 1):
        nb = np.searchsorted(keys, keys + stride)
        nb = np.minimum(nb, len(keys) - 1)
        hit = keys[nb] == keys + stride
        i = np.flatnonzero(hit)
        j = nb[hit]
        d0, d1 = d[i], d[j]
        cross = ((d0 > 0) & (d1 <= 0)) | ((d0 <= 0) & (d1 > 0))
        cross &= d0 != d1
        i, j, d0, d1 = i[cross], j[cross], d0[cross], d1[cross]
        t = d0 / (d0 - d1)
        p0 = grid.voxel_center(ijk[i])
        p1 = grid.voxel_center(ijk[j])
        out.append(p0 + t[:, None] * (p1 - p0))
    pts = np.vstack(out)
    return PointCloud(pts)


def save_grid(grid: TsdfGrid, path) -> None:
    cfg = grid.config
    n = cfg.voxels_per_side
    parts = [
        _MAGIC,
        struct.pack("<I", _VERSION),
        struct.pack("<dIddd", cfg.voxel_size, n, cfg.truncation_distance, cfg.max_weight, cfg.min_weight),
        struct.pack("<I", len(grid.blocks)),
    ]
    for key in sorted(grid.blocks):
        d, w = grid.blocks[key]
        parts.append(struct.pack("<iii", *key))
        parts.append(np.ascontiguousarray(d, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_grid(path) -> TsdfGrid:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(_MAGIC):
        raise ValueError(f"{path}: not a TSDF grid file")
    pos = len(_MAGIC)
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported grid version {version}")
    vs, n, trunc, maxw, minw = struct.unpack_from("<dIddd", data, pos)
    pos += struct.calcsize("<dIddd")
    (nblocks,) = struct.unpack_from("<I", data, pos)
    pos += 4
    cfg = TsdfConfig(vs, n, trunc, maxw, minw)
    grid = TsdfGrid(cfg)
    nbytes = n**3 * 8
    for _ in range(nblocks):
        if pos + 12 + 2 * nbytes > len(data):
            raise ValueError(f"{path}: truncated block payload at byte {pos}")
        key = struct.unpack_from("<iii", data, pos)
        pos += 12
        d = np.frombuffer(data, dtype="<f8", count=n**3, offset=pos).reshape(n, n, n).copy()
        pos += nbytes
        w = np.frombuffer(data, dtype="<f8", count=n**3, offset=pos).reshape(n, n, n).copy()
        pos += nbytes
        grid.blocks[key] = (d, w)
    return grid
