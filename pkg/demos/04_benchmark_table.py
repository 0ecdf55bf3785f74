"""
04_benchmark_table.py

A miniature version of the evaluation harness: a few synthetic pairs per
category, three methods (identity, direct, progressive), then the
per-category PME table with relative columns against the runner-up and
the inlier-proportion curves.

Run:  python demos/04_benchmark_table.py [pairs_per_category] [curves.svg]
"""

import sys

import numpy as np

from homoscale import algebra, estimator, evaluation, synthesis
from homoscale.errors import HomoscaleError

per_cat = int(sys.argv[1]) if len(sys.argv) > 1 else 2
cats = ["RE-L", "LT-L"]  # two labels, two texture seeds
cfg = synthesis.ChainConfig()
W, H = cfg.crop_w, cfg.crop_h

records = {"I3x3": [], "direct": [], "progressive": []}
for ci, cat in enumerate(cats):
    for k in range(per_cat):
        rng = synthesis.rng_for(40 + ci, k)
        chain = synthesis.build_chain(synthesis.textured_image(640, 960, rng), None, cfg, rng)
        pts = synthesis.ground_truth_points(chain.h_st, W, H, 25)
        pid = f"{cat}-{k}"
        records["I3x3"].append(evaluation.pme(algebra.identity(), pts, pid, cat))
        try:
            h, _ = estimator.estimate(chain.source, chain.target, None, chain.masks[0], chain.target_mask)
            records["direct"].append(evaluation.pme(h, pts, pid, cat))
            h, _ = estimator.progressive_estimate(chain)
            records["progressive"].append(evaluation.pme(h, pts, pid, cat))
        except HomoscaleError as exc:
            print(f"{pid}: {exc}")
        print(f"{pid} done")

table = evaluation.category_report(records, avg_label="Avg-L")
print()
print(evaluation.render_text(table, "second_best"))

curves = {m: evaluation.inlier_curve(np.concatenate([r.errors for r in recs])) for m, recs in records.items() if recs}
for m, c in curves.items():
    print(f"{m:12s} inliers below 1 px: {c.proportions[0]:.2f}, below 5 px: {c.proportions[4]:.2f}")
if len(sys.argv) > 2:
    evaluation.plot_curves(curves, sys.argv[2])
    print(f"curves written to {sys.argv[2]}")
