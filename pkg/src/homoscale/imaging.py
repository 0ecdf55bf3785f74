"""Raster images, bilinear warping with validity masks, and pyramids.

Images are float arrays of shape ``(height, width)`` or
``(height, width, channels)`` with samples in ``[0, 1]``.
"""

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from . import algebra
from .errors import TooSmall

_BOUND_TOL = 1e-9
_BINOMIAL = np.array([0.25, 0.5, 0.25])


def as_image(img):
    img = np.asarray(img, dtype=float)
    if img.ndim not in (2, 3) or img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError(f"not an image array: shape {img.shape}")
    return np.clip(np.nan_to_num(img), 0.0, 1.0)


def load_image(path):
    """Read PNG or binary PPM/PGM into ``[0, 1]`` floats (8-bit ``v / 255``)."""
    with PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=float) / 255.0
    return arr


def save_image(path, img):
    arr = np.round(as_image(img) * 255.0).astype(np.uint8)
    PILImage.fromarray(arr).save(path, format="PNG")


def to_gray(img):
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[..., 0]
    return img[..., :3] @ np.array([0.299, 0.587, 0.114])


def resize(img, width, height):
    """Area-averaged downsampling / bilinear upsampling on pixel-centre grids."""
    import cv2

    img = np.asarray(img, dtype=np.float64)
    shrinking = width <= img.shape[1] and height <= img.shape[0]
    interp = cv2.INTER_AREA if shrinking else cv2.INTER_LINEAR
    return cv2.resize(img, (int(width), int(height)), interpolation=interp)


def preimage_coords(h, width, height, src_h=None):
    """Source-frame coordinates of every target pixel under ``invert(h)``."""
    hinv = algebra.invert(h)
    if abs(hinv[2, 2]) > algebra.H33_EPS:
        # the h33 = 1 scaling keeps identity and translations exact
        hinv = hinv / hinv[2, 2]
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    den = hinv[2, 0] * xs + hinv[2, 1] * ys + hinv[2, 2]
    # points mapped through the horizon have no preimage
    bad = np.abs(den) <= 1e-12
    den = np.where(bad, 1.0, den)
    sx = (hinv[0, 0] * xs + hinv[0, 1] * ys + hinv[0, 2]) / den
    sy = (hinv[1, 0] * xs + hinv[1, 1] * ys + hinv[1, 2]) / den
    sx[bad] = np.inf
    sy[bad] = np.inf
    return sx, sy


def _inside(sx, sy, width, height):
    return (
        (sx >= -_BOUND_TOL)
        & (sx <= width - 1 + _BOUND_TOL)
        & (sy >= -_BOUND_TOL)
        & (sy <= height - 1 + _BOUND_TOL)
    )


def bilinear_sample(img, sx, sy, src_mask=None):
    """Sample ``img`` at float coordinates; returns ``(values, valid)``.

    A sample is valid iff it lies in the frame and every interpolation
    neighbour carrying weight is inside ``src_mask`` (when given).  Invalid samples are zero.
    """
    img = np.asarray(img, dtype=float)
    height, width = img.shape[:2]
    valid = _inside(sx, sy, width, height)
    cx = np.where(valid, np.clip(sx, 0.0, width - 1), 0.0)
    cy = np.where(valid, np.clip(sy, 0.0, height - 1), 0.0)
    x0 = np.minimum(np.floor(cx).astype(int), width - 2)
    y0 = np.minimum(np.floor(cy).astype(int), height - 2)
    ax = cx - x0
    ay = cy - y0
    if src_mask is not None:
        m = np.asarray(src_mask, dtype=bool)
        # neighbours with zero interpolation weight do not need to be valid
        lx, hx, ly, hy = ax < 1, ax > 0, ay < 1, ay > 0
        valid &= ~(lx & ly) | m[y0, x0]
        valid &= ~(hx & ly) | m[y0, x0 + 1]
        valid &= ~(lx & hy) | m[y0 + 1, x0]
        valid &= ~(hx & hy) | m[y0 + 1, x0 + 1]
    if img.ndim == 3:
        ax = ax[..., None]
        ay = ay[..., None]
    top = img[y0, x0] * (1 - ax) + img[y0, x0 + 1] * ax
    bot = img[y0 + 1, x0] * (1 - ax) + img[y0 + 1, x0 + 1] * ax
    out = top * (1 - ay) + bot * ay
    keep = valid[..., None] if img.ndim == 3 else valid
    return np.where(keep, out, 0.0), valid


def warp(img, h, src_mask=None, out_size=None):
    """Inverse-warp ``img`` by ``h``: output ``p`` samples ``img`` at ``h^-1 p``.

    Returns the warped image and its validity mask.  ``out_size`` is
    ``(width, height)`` and defaults to the input size.
    """
    img = np.asarray(img, dtype=float)
    height, width = img.shape[:2]
    ow, oh = out_size if out_size is not None else (width, height)
    sx, sy = preimage_coords(h, ow, oh)
    return bilinear_sample(img, sx, sy, src_mask)


def valid_mask(h, width, height):
    sx, sy = preimage_coords(h, width, height)
    return _inside(sx, sy, width, height)


def non_overlap_rate(h, width, height):
    """Fraction of target pixels whose preimage falls outside the source frame."""
    return float(1.0 - valid_mask(h, width, height).mean())


def non_overlap_rate_mc(h, width, height, samples, rng):
    """Monte-Carlo estimate of ``non_overlap_rate`` from uniform target points."""
    pts = rng.uniform([-0.5, -0.5], [width - 0.5, height - 0.5], size=(samples, 2))
    pts = np.round(pts)
    src = algebra.apply(algebra.invert(h), pts)
    return float(1.0 - _inside(src[:, 0], src[:, 1], width, height).mean())


def smooth(img):
    """3x3 binomial smoothing with mirrored borders."""
    out = ndimage.convolve1d(np.asarray(img, dtype=float), _BINOMIAL, axis=0, mode="mirror")
    return ndimage.convolve1d(out, _BINOMIAL, axis=1, mode="mirror")


def downsample(img):
    img = smooth(img)
    height, width = img.shape[:2]
    pad = [(0, height % 2), (0, width % 2)] + [(0, 0)] * (img.ndim - 2)
    img = np.pad(img, pad, mode="edge")
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def pyramid(img, levels):
    """Level 0 is ``img``; each further level halves the size (rounding up)."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    out = [np.asarray(img, dtype=float)]
    for _ in range(levels - 1):
        nxt = downsample(out[-1])
        if min(nxt.shape[:2]) < 8:
            raise TooSmall(f"pyramid level would be {nxt.shape[1]}x{nxt.shape[0]}")
        out.append(nxt)
    if min(out[0].shape[:2]) < 8:
        raise TooSmall("input smaller than 8x8")
    return out
