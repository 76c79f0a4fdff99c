"""Fit superellipsoids to half-observed, noisy fruit surfaces.

Run: python demos/fit_partial_view.py
"""

import numpy as np

from fruitshape import Cluster, FitConfig, PointCloud, Superellipsoid, estimate_center, estimate_normals
from fruitshape import fit_superellipsoid, sample_surface, volume, volume_accuracy

rng = np.random.default_rng(3)
for trial in range(5):
    axes = rng.uniform(0.035, 0.055, 3)
    truth = Superellipsoid(*axes, *rng.uniform(0.4, 0.9, 2), rng.uniform(-0.2, 0.2, 3), rng.uniform(-0.5, 0.5, 3))
    pts = sample_surface(truth, 40)
    n = rng.normal(size=3)
    pts = pts[(pts - truth.center) @ n > 0]
    pts = pts + rng.normal(0, 0.001, pts.shape)
    cl = Cluster(estimate_normals(PointCloud(pts)), np.arange(len(pts)))
    cl = cl.with_center(estimate_center(cl))
    for label, cfg in (("per-point priors", FitConfig()), ("priors once", FitConfig(prior_per_point=False))):
        res = fit_superellipsoid(cl, cfg)
        acc = volume_accuracy(res.volume, volume(truth))
        print(f"trial {trial} {label:17s} acc_V {acc:6.3f}  iters {res.iterations:3d}  "
              f"converged {res.converged}")
