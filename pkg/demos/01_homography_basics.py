"""
01_homography_basics.py

A homography can be held three ways in this package: as a canonical 3x3
matrix, as four corner offsets, and as a dense displacement field (flow).
This walk-through converts between them and shows what the warp mask and
the non-overlap rate measure.

Run:  python demos/01_homography_basics.py
"""

import numpy as np

from homoscale import algebra, flow, imaging, synthesis

W, H = 320, 480
rng = synthesis.rng_for(0, 1)

# four corners pushed around by up to 40 px
offsets = rng.uniform(-40, 40, size=(4, 2))
h = synthesis.homography_from_offsets(offsets, W, H)
print("canonical matrix (unit Frobenius norm, h33 > 0):")
print(np.array2string(h, precision=5, suppress_small=True))

# DLT from eight correspondences recovers the same matrix
src = rng.uniform([0, 0], [W - 1, H - 1], size=(8, 2))
h_dlt = algebra.dlt_solve(src, algebra.apply(h, src))
print(f"\nDLT from 8 points, max element error: {algebra.max_element_error(h_dlt, h):.2e}")

# the flow view: one displacement per pixel, and back again
f = flow.flow_from_homography(h, W, H)
print(f"flow shape {f.shape}, mean |displacement| {np.linalg.norm(f, axis=2).mean():.1f} px")
back = flow.homography_from_flow(f)
print(f"flow -> matrix round trip error: {algebra.max_element_error(back, h):.2e}")

# same transform at the 256x256 training resolution
small = flow.conjugate(h, W, H, 256, 256)
f_small = flow.flow_from_homography(small, 256, 256)
print(f"resized flow shape {f_small.shape}")

# warping a texture leaves a band with no source content
img = synthesis.textured_image(W, H, rng)
warped, mask = imaging.warp(img, h)
print(f"\nwarp validity: {mask.mean():.1%} of target pixels have a source preimage")
print(f"non-overlap rate: {imaging.non_overlap_rate(h, W, H):.3f}")
print(f"Monte-Carlo estimate: {imaging.non_overlap_rate_mc(h, W, H, 20000, rng):.3f}")

# composition: going there and back is the identity
loop = algebra.compose(algebra.invert(h), h)
print(f"\nH^-1 H vs identity: {algebra.frobenius_distance(loop, algebra.identity()):.2e}")
