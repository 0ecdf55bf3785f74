"""Synthetic homography sampling and progressive chain construction."""

import json
import os
from dataclasses import asdict, dataclass, field

import cv2
import numpy as np

from . import algebra, imaging
from .errors import SamplingExhausted, TooSmall

MAX_REJECTIONS = 1000
CATEGORIES = ("RE-L", "LT-L", "LL-L", "SF-L", "LF-L", "synthetic")


@dataclass
class ChainConfig:
    n: int = 2
    crop_w: int = 320
    crop_h: int = 480
    resize_w: int = 256
    resize_h: int = 256
    max_rate: float = 0.2
    min_pert: float = 4.0
    max_pert: float = 64.0
    # source-target pair in synthetic-target mode
    target_rate: tuple = (0.2, 0.5)
    target_shift: tuple = (160.0, 240.0)
    target_pert: float = 32.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be >= 0")
        if not 0.0 < self.max_rate < 1.0:
            raise ValueError("max_rate must lie in (0, 1)")
        if self.min_pert <= 0.0 or self.max_pert < self.min_pert:
            raise ValueError("need 0 < min_pert <= max_pert")
        lo, hi = self.target_rate
        if not 0.0 <= lo < hi < 1.0:
            raise ValueError("target_rate must satisfy 0 <= lo < hi < 1")
        self.target_rate = (float(lo), float(hi))
        self.target_shift = tuple(float(v) for v in self.target_shift)


@dataclass
class ProgressiveChain:
    """``images[0]`` is the source, ``images[1:]`` the generated intermediates."""

    images: list
    target: np.ndarray
    gts: list = field(default_factory=list)
    h_st: np.ndarray = None
    masks: list = field(default_factory=list)
    target_mask: np.ndarray = None

    @property
    def n(self):
        return len(self.images) - 1

    @property
    def source(self):
        return self.images[0]

    def pairs(self):
        """Image pairs ``(I_si, I_si+1)`` followed by the bridge ``(I_sn, I_t)``."""
        seq = self.images + [self.target]
        return list(zip(seq[:-1], seq[1:]))


def rng_for(seed, *keys):
    """Counter-based generator: independent streams per ``(seed, keys...)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def frame_corners(width, height):
    return np.array(
        [[0.0, 0.0], [width - 1.0, 0.0], [width - 1.0, height - 1.0], [0.0, height - 1.0]]
    )


def _is_convex(quad):
    d = np.roll(quad, -1, axis=0) - quad
    cross = d[:, 0] * np.roll(d, -1, axis=0)[:, 1] - d[:, 1] * np.roll(d, -1, axis=0)[:, 0]
    return bool(np.all(cross > 0) or np.all(cross < 0))


def homography_from_offsets(offsets, width, height):
    """Homography moving the frame corners by ``offsets`` (4x2)."""
    corners = frame_corners(width, height)
    return algebra.dlt_solve(corners, corners + np.asarray(offsets, dtype=float).reshape(4, 2))


def offsets_from_homography(h, width, height):
    corners = frame_corners(width, height)
    return algebra.apply(h, corners) - corners


def sample_homography(cfg, rng, rate_range=None, max_pert=None, shift=(0.0, 0.0)):
    """Draw a corner-perturbation homography whose non-overlap rate lies in
    ``rate_range`` (default ``(0, cfg.max_rate]``).

    Each corner moves by a shared uniform shift in ``[-shift, shift]`` plus
    an independent uniform offset in ``[-max_pert, max_pert]``; draws whose
    largest corner offset is below ``cfg.min_pert`` or whose corner quad
    folds over are redrawn.
    """
    lo, hi = rate_range if rate_range is not None else (0.0, cfg.max_rate)
    max_pert = cfg.max_pert if max_pert is None else max_pert
    width, height = cfg.crop_w, cfg.crop_h
    corners = frame_corners(width, height)
    for _ in range(MAX_REJECTIONS):
        t = rng.uniform(-1.0, 1.0, size=2) * np.asarray(shift, dtype=float)
        off = t + rng.uniform(-max_pert, max_pert, size=(4, 2))
        if np.max(np.abs(off)) < cfg.min_pert:
            continue
        if not _is_convex(corners + off):
            continue
        h = algebra.dlt_solve(corners, corners + off)
        rate = imaging.non_overlap_rate(h, width, height)
        if (lo < rate or lo == 0.0) and rate <= hi:
            return h
    raise SamplingExhausted(f"no homography with rate in ({lo}, {hi}] after {MAX_REJECTIONS} draws")


def textured_image(width, height, rng, channels=3):
    """Multi-octave smoothed noise with a few hard-edged blobs."""
    img = np.zeros((height, width, channels))
    for sigma, amp in ((24.0, 1.0), (8.0, 0.7), (3.0, 0.5), (1.2, 0.25)):
        noise = rng.standard_normal((height, width, channels))
        noise[..., 1:] = 0.6 * noise[..., :1] + 0.4 * noise[..., 1:]
        # float32 blurs several times faster; the texture needs no more precision
        layer = cv2.GaussianBlur(noise.astype(np.float32), (0, 0), sigmaX=sigma, borderType=cv2.BORDER_REFLECT)
        layer = layer.reshape(noise.shape).astype(float)
        img += amp * layer / (layer.std() + 1e-12)
    ys, xs = np.mgrid[0:height, 0:width]
    for _ in range(12):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        r = rng.uniform(0.03, 0.12) * min(width, height)
        img[(xs - cx) ** 2 + (ys - cy) ** 2 < r * r] += rng.normal(0.0, 1.5, size=channels)
    img = (img - img.mean()) / (4.0 * img.std() + 1e-12) + 0.5
    return np.clip(img, 0.0, 1.0)


def crop_near_center(img, width, height, rng, jitter=0.1):
    """Crop ``width x height`` near the centre with uniform jitter of up to
    ``jitter`` of the image dims; returns the crop and its top-left corner."""
    ih, iw = img.shape[:2]
    if iw < width or ih < height:
        raise TooSmall(f"image {iw}x{ih} smaller than crop {width}x{height}")
    x0 = (iw - width) / 2 + rng.uniform(-jitter, jitter) * iw
    y0 = (ih - height) / 2 + rng.uniform(-jitter, jitter) * ih
    x0 = int(np.clip(round(x0), 0, iw - width))
    y0 = int(np.clip(round(y0), 0, ih - height))
    return img[y0:y0 + height, x0:x0 + width], (x0, y0)


def build_chain(source, target, cfg, rng):
    """Crop the source, insert ``cfg.n`` warped intermediates and, when
    ``target`` is None, synthesise the target from a sampled ``H_st``."""
    source = imaging.as_image(source)
    crop, (x0, y0) = crop_near_center(source, cfg.crop_w, cfg.crop_h, rng)
    w, h = cfg.crop_w, cfg.crop_h

    h_st = None
    if target is None:
        h_st = sample_homography(
            cfg, rng, rate_range=cfg.target_rate, max_pert=cfg.target_pert, shift=cfg.target_shift
        )
        # warp in full-image coordinates so the target has content past the crop border
        shift = algebra.translation(x0, y0)
        h_full = algebra.compose(shift, algebra.compose(h_st, algebra.invert(shift)))
        full, full_mask = imaging.warp(source, h_full)
        tgt = full[y0:y0 + h, x0:x0 + w]
        tgt_mask = full_mask[y0:y0 + h, x0:x0 + w]
    else:
        target = imaging.as_image(target)
        if target.shape[:2] != source.shape[:2]:
            raise ValueError("source and target must share dimensions")
        tgt = target[y0:y0 + h, x0:x0 + w]
        tgt_mask = np.ones((h, w), dtype=bool)

    images = [crop]
    masks = [np.ones((h, w), dtype=bool)]
    gts = []
    for _ in range(cfg.n):
        g = sample_homography(cfg, rng)
        warped, mask = imaging.warp(images[-1], g, src_mask=masks[-1])
        images.append(warped)
        masks.append(mask)
        gts.append(g)
    return ProgressiveChain(images, tgt, gts, h_st, masks, tgt_mask)


def ground_truth_points(h, width, height, count=9):
    """Evenly spread correspondences ``(xs, ys, xt, yt)`` under ``h`` whose
    targets fall inside the frame when possible."""
    g = int(np.ceil(np.sqrt(count)))
    xs = np.linspace(0.1 * (width - 1), 0.9 * (width - 1), g)
    ys = np.linspace(0.1 * (height - 1), 0.9 * (height - 1), g)
    src = np.array([(x, y) for y in ys for x in xs])[:count]
    dst = algebra.apply(h, src)
    return np.hstack([src, dst])


def save_chain(chain, directory, stem):
    """Write chain images as PNG plus ``<stem>.json`` holding the matrices."""
    os.makedirs(directory, exist_ok=True)
    names = []
    for i, img in enumerate(chain.images):
        name = f"{stem}_s{i}.png"
        imaging.save_image(os.path.join(directory, name), img)
        names.append(name)
    tname = f"{stem}_t.png"
    imaging.save_image(os.path.join(directory, tname), chain.target)
    record = {
        "images": names,
        "target": tname,
        "gts": [algebra.to_json(g)["h"] for g in chain.gts],
        "h_st": None if chain.h_st is None else algebra.to_json(chain.h_st)["h"],
    }
    path = os.path.join(directory, f"{stem}.json")
    _atomic_write(path, json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def load_chain(path):
    with open(path) as fh:
        record = json.load(fh)
    base = os.path.dirname(path)
    images = [imaging.load_image(os.path.join(base, n)) for n in record["images"]]
    target = imaging.load_image(os.path.join(base, record["target"]))
    gts = [algebra.from_json({"h": g}) for g in record["gts"]]
    h_st = None if record["h_st"] is None else algebra.from_json({"h": record["h_st"]})
    masks = [np.ones(images[0].shape[:2], dtype=bool)]
    for g in gts:
        _, m = imaging.warp(masks[-1].astype(float), g, src_mask=masks[-1])
        masks.append(m)
    return ProgressiveChain(images, target, gts, h_st, masks, None)


def config_dict(cfg):
    return asdict(cfg)


def _atomic_write(path, text):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
