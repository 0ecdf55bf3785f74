"""Hand-crafted cell descriptors and global/local correlation volumes."""

from dataclasses import dataclass

import numpy as np

from . import imaging
from .errors import DepthMismatch, NoMatches, TooSmall

N_BINS = 8
DEPTH = 2 + N_BINS
INTENSITY_WEIGHT = 0.5


def _unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n < 1e-12, 1.0, n) * (n >= 1e-12)


@dataclass
class FeatureMap:
    """Unit descriptors on a regular grid of cells.

    Position ``(i, j)`` covers image pixels ``[j*stride, j*stride + cell)``
    horizontally (same for rows); ``valid`` flags cells lying entirely
    inside the image validity mask.
    """

    data: np.ndarray
    cell: int
    stride: int
    valid: np.ndarray = None

    def __post_init__(self):
        if self.valid is None:
            self.valid = np.ones(self.data.shape[:2], dtype=bool)

    @property
    def shape(self):
        return self.data.shape[:2]

    @property
    def depth(self):
        return self.data.shape[2]

    def centers(self):
        """Pixel coordinates of every cell centre, shape ``(h, w, 2)``."""
        h, w = self.shape
        off = (self.cell - 1) / 2.0
        xs = np.arange(w) * self.stride + off
        ys = np.arange(h) * self.stride + off
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)


@dataclass
class CorrelationMap:
    kind: str
    values: np.ndarray
    src: FeatureMap
    tgt: FeatureMap
    radius: int = 0

    @property
    def channels(self):
        return self.values.shape[2]


def _window_sums(arr, cell, stride, out_h, out_w):
    """Sum of ``arr`` over ``cell x cell`` windows at the given stride."""
    ii = np.zeros((arr.shape[0] + 1, arr.shape[1] + 1) + arr.shape[2:])
    ii[1:, 1:] = arr.cumsum(0).cumsum(1)
    r0 = np.arange(out_h) * stride
    c0 = np.arange(out_w) * stride
    r1, c1 = r0 + cell, c0 + cell
    return ii[r1][:, c1] - ii[r0][:, c1] - ii[r1][:, c0] + ii[r0][:, c0]


def extract_features(img, cell, stride=None, mask=None):
    """Per-cell descriptor: mean intensity (centred on 0.5), intensity standard
    deviation and a magnitude-weighted 8-bin gradient orientation histogram.

    The intensity pair and the histogram are unit-normalised separately,
    the pair is down-weighted, and the whole vector is L2-normalised.  Zero
    descriptors are replaced by the first unit basis vector.
    """
    stride = cell if stride is None else stride
    gray = imaging.to_gray(img)
    height, width = gray.shape
    if height < cell or width < cell or cell < 2:
        raise TooSmall(f"image {width}x{height} too small for cell {cell}")
    out_h = (height - cell) // stride + 1
    out_w = (width - cell) // stride + 1

    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), 2 * np.pi) * (N_BINS / (2 * np.pi))
    lo = np.floor(ang).astype(int) % N_BINS
    frac = ang - np.floor(ang)
    hist = np.zeros((height, width, N_BINS))
    rows, cols = np.indices((height, width))
    # linear vote split between the two nearest orientation bins
    hist[rows, cols, lo] += mag * (1.0 - frac)
    hist[rows, cols, (lo + 1) % N_BINS] += mag * frac

    area = float(cell * cell)
    # centring first keeps the variance free of cancellation on flat cells
    g0 = gray - gray.mean()
    s1 = _window_sums(g0, cell, stride, out_h, out_w) / area
    s2 = _window_sums(g0 * g0, cell, stride, out_h, out_w) / area
    std = np.sqrt(np.maximum(s2 - s1 * s1, 0.0))
    s1 = s1 + gray.mean()
    hsum = _window_sums(hist, cell, stride, out_h, out_w) / area

    # each block is normalised on its own so brightness cannot swamp the histogram
    inten = _unit(np.stack([s1 - 0.5, std], axis=2)) * INTENSITY_WEIGHT
    desc = _unit(np.concatenate([inten, _unit(hsum)], axis=2))
    zero = np.linalg.norm(desc, axis=2) < 0.5
    desc[zero] = 0.0
    desc[zero, 0] = 1.0

    valid = None
    if mask is not None:
        bad = _window_sums((~np.asarray(mask, dtype=bool)).astype(float), cell, stride, out_h, out_w)
        valid = bad < 0.5
    return FeatureMap(desc, cell, stride, valid)


def global_correlation(src, tgt):
    """All-pairs inner products, reshaped to ``(h, w, h_t * w_t)``.

    Target positions outside ``tgt.valid`` score -1.
    """
    if src.depth != tgt.depth:
        raise DepthMismatch(f"depths {src.depth} and {tgt.depth} differ")
    h, w = src.shape
    a = src.data.reshape(-1, src.depth)
    b = tgt.data.reshape(-1, tgt.depth)
    vals = (a @ b.T).reshape(h, w, -1)
    vals[..., ~tgt.valid.ravel()] = -1.0
    return CorrelationMap("global", vals, src, tgt)


def local_correlation(src, tgt, radius):
    """Inner products with targets displaced by ``(dx, dy)``, ``|dx|,|dy| <= R``.

    Channel ``(dy + R) * (2R + 1) + (dx + R)``; out-of-range or invalid
    targets score -1.
    """
    if src.depth != tgt.depth:
        raise DepthMismatch(f"depths {src.depth} and {tgt.depth} differ")
    if src.shape != tgt.shape:
        raise DepthMismatch(f"feature grids {src.shape} and {tgt.shape} differ")
    if radius < 1:
        raise ValueError("radius must be >= 1")
    h, w = src.shape
    k = 2 * radius + 1
    pad_t = np.zeros((h + 2 * radius, w + 2 * radius, tgt.depth))
    pad_t[radius:radius + h, radius:radius + w] = tgt.data
    pad_v = np.zeros((h + 2 * radius, w + 2 * radius), dtype=bool)
    pad_v[radius:radius + h, radius:radius + w] = tgt.valid
    vals = np.empty((h, w, k * k))
    for dy in range(-radius, radius + 1):
        rows = slice(radius + dy, radius + dy + h)
        # all horizontal displacements of this row band at once: (h, w, depth, k)
        win = np.lib.stride_tricks.sliding_window_view(pad_t[rows], k, axis=1)
        ok = np.lib.stride_tricks.sliding_window_view(pad_v[rows], k, axis=1)
        dots = np.einsum("ijd,ijdk->ijk", src.data, win)
        ch = (dy + radius) * k
        vals[..., ch:ch + k] = np.where(ok, dots, -1.0)
    return CorrelationMap("local", vals, src, tgt, radius)


def _distance(sim):
    return np.sqrt(np.maximum(2.0 - 2.0 * sim, 0.0))


def _parabola_offset(cm, c0, cp):
    den = cm - 2.0 * c0 + cp
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(den < -1e-12, 0.5 * (cm - cp) / den, 0.0)
    return np.clip(off, -0.5, 0.5)


def matches_from_correlation(corr, ratio, subpixel=False, mutual=False, min_matches=4):
    """Ratio-tested best matches as an ``(N, 4)`` array ``(xs, ys, xt, yt)``.

    A query keeps its best channel iff the descriptor distance to it is
    below ``ratio`` times the distance to the best channel outside the 3x3
    neighbourhood of the winner.  Ties go to the smallest channel index.
    ``mutual`` (global maps only) also requires the target position to pick
    the query back.  ``subpixel`` (local maps only) refines displacements by
    a parabola through the neighbouring channels.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    vals = corr.values
    h, w, C = vals.shape
    flat = vals.reshape(-1, C)
    best = np.argmax(flat, axis=1)
    best_val = flat[np.arange(len(flat)), best]

    if corr.kind == "global":
        th, tw = corr.tgt.shape
        by, bx = np.divmod(best, tw)
        ty, tx = np.divmod(np.arange(C), tw)
    else:
        k = 2 * corr.radius + 1
        by, bx = np.divmod(best, k)
        ty, tx = np.divmod(np.arange(C), k)
    near = (np.abs(ty[None, :] - by[:, None]) <= 1) & (np.abs(tx[None, :] - bx[:, None]) <= 1)
    second = np.where(near, -np.inf, flat).max(axis=1)
    second = np.where(np.isfinite(second), second, -1.0)

    keep = corr.src.valid.ravel() & (best_val > -1.0)
    keep &= _distance(best_val) < ratio * _distance(second)
    if mutual and corr.kind == "global":
        back = np.argmax(np.where(corr.src.valid.ravel()[:, None], flat, -np.inf), axis=0)
        keep &= back[best] == np.arange(len(flat))

    src_c = corr.src.centers().reshape(-1, 2)
    if corr.kind == "global":
        dst_c = corr.tgt.centers().reshape(-1, 2)[best]
    else:
        r = corr.radius
        disp = np.stack([bx - r, by - r], axis=1).astype(float)
        if subpixel:
            idx = np.arange(len(flat))
            k = 2 * r + 1
            inner_x = (bx > 0) & (bx < k - 1)
            inner_y = (by > 0) & (by < k - 1)
            cxm = flat[idx, np.where(inner_x, best - 1, best)]
            cxp = flat[idx, np.where(inner_x, best + 1, best)]
            cym = flat[idx, np.where(inner_y, best - k, best)]
            cyp = flat[idx, np.where(inner_y, best + k, best)]
            ok_x = inner_x & (cxm > -1.0) & (cxp > -1.0)
            ok_y = inner_y & (cym > -1.0) & (cyp > -1.0)
            disp[:, 0] += np.where(ok_x, _parabola_offset(cxm, best_val, cxp), 0.0)
            disp[:, 1] += np.where(ok_y, _parabola_offset(cym, best_val, cyp), 0.0)
        dst_c = src_c + disp * corr.tgt.stride
    out = np.hstack([src_c, dst_c])[keep]
    if len(out) < min_matches:
        raise NoMatches(f"only {len(out)} matches survived the ratio test")
    return out
