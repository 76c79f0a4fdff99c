"""Fuse six synthetic depth scans of a sphere and extract its surface.

Run: python demos/tsdf_sphere.py
"""

import numpy as np

from fruitshape import PosedCloud, Superellipsoid, TsdfConfig, TsdfGrid, extract_surface, integrate
from fruitshape.scene import axis_views, render_frame
from fruitshape.segment import mask_to_cloud, threshold_mask

center, radius = np.array([0.01, -0.02, 0.0]), 0.05
ball = Superellipsoid(radius, radius, radius, 1.0, 1.0, tuple(center))

grid = TsdfGrid(TsdfConfig())
for pose in axis_views(0.5, center):
    frame, _ = render_frame([ball], pose, 240, 240, 500.0)
    cloud = mask_to_cloud(frame, threshold_mask(frame), world=False)
    integrate(grid, PosedCloud(cloud, pose))
    print(f"integrated {len(cloud):6d} points, {len(grid.blocks)} block(s) allocated")

surf = extract_surface(grid)
err = np.abs(np.linalg.norm(surf.points - center, axis=1) - radius)
print(f"\n{len(surf)} surface points, mean |r - R| = {err.mean() * 1000:.2f} mm, "
      f"max {err.max() * 1000:.2f} mm (voxel {grid.config.voxel_size * 1000:.0f} mm)")
