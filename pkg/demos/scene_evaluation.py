"""Render a cluttered scene, run the whole pipeline and print the report.

Run: python demos/scene_evaluation.py [seed]
"""

import sys

from fruitshape import SceneSpec, generate_scene, run_pipeline

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
scene = generate_scene(SceneSpec(n_fruits=10, n_views=6, seed=seed))
res = run_pipeline(scene)
rep = res.report
print("stage counts:", rep.stage_counts)
print(f"{'row':>6} {'count':>6} {'center cm':>10} {'acc_V':>7}   box acc_V")
for name, row in rep.rows.items():
    base = rep.baseline.rows[name]
    print(f"{name:>6} {row.count:6d} {row.center_cm_mean:10.2f} {row.acc_mean:7.3f}   {base.acc_mean:7.3f}")
