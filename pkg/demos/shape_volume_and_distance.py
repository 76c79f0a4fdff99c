"""Superellipsoid basics: shape family, closed-form volume, radial distance.

Run: python demos/shape_volume_and_distance.py
"""

import numpy as np

from fruitshape import Superellipsoid, implicit_value, radial_distance, sample_surface, volume

# eps1/eps2 move the shape between box-like (small) and pinched (near 2)
for e in (0.2, 0.5, 1.0, 1.5, 1.9):
    s = Superellipsoid(0.05, 0.05, 0.05, e, e)
    print(f"eps={e:.1f}  volume {volume(s) * 1e6:7.2f} cm^3")
print(f"sphere r=5 cm analytic   {4 / 3 * np.pi * 0.05**3 * 1e6:7.2f} cm^3")

# Monte Carlo check on a lopsided shape
s = Superellipsoid(0.04, 0.06, 0.05, 0.4, 0.8)
rng = np.random.default_rng(0)
q = rng.uniform(-1, 1, (2_000_000, 3)) * s.axes
mc = np.mean(implicit_value(s, q) <= 1.0) * 8 * np.prod(s.axes)
print(f"\nclosed form {volume(s) * 1e6:.3f} cm^3, Monte Carlo {mc * 1e6:.3f} cm^3")

# radial distance: zero on the surface, growing away from it along a ray
on = sample_surface(s, 20, local=True)
print(f"max distance of surface samples: {np.max(radial_distance(s, on)):.1e}")
ray = np.array([1.0, 1.0, 1.0]) / np.sqrt(3)
for t in (0.01, 0.03, 0.06, 0.09):
    print(f"  t={t:.2f}  d={float(radial_distance(s, t * ray)):.4f}")
