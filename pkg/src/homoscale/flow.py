"""Dense homography flows over pixel meshgrids.

A flow is a ``(height, width, 2)`` array holding the displacement
``(u, v) = H(x, y) - (x, y)`` at every integer pixel centre.
"""

import functools
import struct

import cv2
import numpy as np

from . import algebra
from .errors import DegenerateConfiguration, GridDegenerate, ParseError

FLOW_MAGIC = b"HFLO"
GRID_DENOM_EPS = 1e-9


def meshgrid(width, height, step=1):
    if width < 2 or height < 2:
        raise ValueError("meshgrid needs width, height >= 2")
    xs = np.arange(0, width, step, dtype=float)
    ys = np.arange(0, height, step, dtype=float)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def resize_matrix(old_w, old_h, new_w, new_h):
    """Pixel-centre aligned map from an ``old`` raster to a ``new`` raster."""
    return algebra.scaling(new_w / old_w, new_h / old_h, 0.5, 0.5)


def conjugate(h, old_w, old_h, new_w, new_h):
    """Express ``h`` (acting on ``old`` rasters) on ``new`` rasters."""
    S = resize_matrix(old_w, old_h, new_w, new_h)
    return algebra.normalize(S @ algebra.normalize(h) @ np.linalg.inv(S))


def flow_at(h, pts):
    """Displacement of arbitrary ``(..., 2)`` points under ``h``."""
    h = algebra.normalize(h)
    pts = np.asarray(pts, dtype=float)
    flat = np.ascontiguousarray(pts.reshape(-1, 2))
    den = flat @ h[2, :2] + h[2, 2]
    if np.any(np.abs(den) <= GRID_DENOM_EPS):
        raise GridDegenerate("homography horizon crosses the grid")
    mapped = cv2.perspectiveTransform(flat[None], h)[0]
    return (mapped - flat).reshape(pts.shape)


def flow_from_homography(h, width, height):
    grid = _normalized_grid(width, height)[0]
    return flow_at(h, grid).reshape(height, width, 2)


@functools.lru_cache(maxsize=8)
def _normalized_grid(width, height):
    """Grid points, their Hartley transform and transposed monomials."""
    grid = meshgrid(width, height).reshape(-1, 2)
    grid_n, T = algebra.hartley_normalize(grid)
    mono_t = np.ascontiguousarray(algebra.monomials(grid_n).T)
    mono_sum = mono_t.sum(axis=1)
    for a in (grid, T, mono_t, mono_sum):
        a.flags.writeable = False
    return grid, T, mono_t, mono_sum


def homography_from_flow(flow):
    """DLT over every grid correspondence ``(x, y) -> (x + u, y + v)``.

    Same solution as ``dlt_solve`` on the full grid, but the normal
    matrix is accumulated with a handful of passes over the flow so that
    dense flows stay cheap.
    """
    flow = np.asarray(flow, dtype=float)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError("flow must have shape (height, width, 2)")
    height, width = flow.shape[:2]
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow has non-finite values")
    grid, T1, mono_t, mono_sum = _normalized_grid(width, height)
    dst = grid + flow.reshape(-1, 2)
    # centring is folded into the sums; numpy broadcasts over (N, 2) slowly
    c = mono_t[0] @ dst / len(dst)
    sq = (dst * dst) @ np.ones(2) - 2.0 * (dst @ c) + c @ c
    d = np.sqrt(np.maximum(sq, 0.0)).mean()
    if d < 1e-12:
        raise DegenerateConfiguration("target points are coincident")
    s = np.sqrt(2.0) / d
    T2 = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    sums = np.empty((4, 6))
    sums[0] = mono_sum
    sums[1:3] = (mono_t @ dst - np.outer(mono_sum, c)).T * s
    sums[3] = (mono_t @ sq) * (s * s)
    return algebra.solve_normal(algebra.assemble_normal(sums), T1, T2)


def rescale_flow(flow, new_w, new_h):
    """Resample a homography flow onto a ``new_w x new_h`` raster."""
    if new_w < 2 or new_h < 2:
        raise ValueError("target raster must be at least 2x2")
    height, width = flow.shape[:2]
    h = homography_from_flow(flow)
    return flow_from_homography(conjugate(h, width, height, new_w, new_h), new_w, new_h)


def write_flow(path, flow):
    flow = np.asarray(flow, dtype="<f4")
    height, width = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC)
        fh.write(struct.pack("<II", width, height))
        fh.write(np.ascontiguousarray(flow).tobytes())


def read_flow(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != FLOW_MAGIC:
        raise ParseError(f"{path}: bad flow magic {data[:4]!r}")
    width, height = struct.unpack("<II", data[4:12])
    body = np.frombuffer(data[12:], dtype="<f4")
    if body.size != width * height * 2:
        raise ParseError(f"{path}: expected {width * height * 2} floats, got {body.size}")
    return body.reshape(height, width, 2).astype(float)

