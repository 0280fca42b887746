"""Synthetic segmentation data plus directory-based dataset I/O.

Samples are grayscale images with elliptical foreground blobs: masks
are exact pixel-center ellipse membership, images are anti-aliased
(4x4 supersampled coverage) with additive Gaussian noise.
"""

import math
import os

import numpy as np

from .autodiff import Tensor
from .errors import DataError, ShapeError
from .pgm import load_pgm, save_pgm
from .rng import SplitMix64, derive_seed

FG_LEVEL = 0.9
BG_LEVEL = 0.1
NOISE_SIGMA = 0.04


class SegmentationSample:
    """Paired image [1,H,W] in [0,1] and boolean mask [H,W]."""

    __slots__ = ("id", "image", "mask", "ellipses")

    def __init__(self, sample_id, image, mask, ellipses=None):
        if image.ndim != 3 or image.shape[0] != 1:
            raise ShapeError(f"image must be [1,H,W], got {image.shape}")
        if mask.shape != image.shape[1:]:
            raise ShapeError(
                f"mask shape {mask.shape} does not match image {image.shape[1:]}"
            )
        self.id = sample_id
        self.image = image
        self.mask = mask
        self.ellipses = ellipses or []


def _ellipse_member(h, w, ellipses, rr, cc):
    """Membership of coordinate grids (rr, cc) in the union of ellipses."""
    inside = np.zeros(np.broadcast_shapes(rr.shape, cc.shape), dtype=bool)
    for (cy, cx, a, b, theta) in ellipses:
        dy = rr - cy
        dx = cc - cx
        ct, st = math.cos(theta), math.sin(theta)
        u = (dx * ct + dy * st) / a
        v = (-dx * st + dy * ct) / b
        inside |= u * u + v * v <= 1.0
    return inside


def synth_dataset(n, h, w, seed):
    """n deterministic samples of size h x w with 1-2 ellipse blobs each.

    Sample i is drawn from its own stream derived from (seed, i), so the
    first k samples do not depend on n.  Axis lengths are capped so total
    foreground stays at or below 60% of the frame, and floored so every
    mask is nonempty.
    """
    if h < 16 or w < 16:
        raise DataError(f"synthetic images must be at least 16x16, got {h}x{w}")
    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]
    # subpixel offsets for 4x4 coverage sampling
    sub = (np.arange(4) + 0.5) / 4.0 - 0.5
    samples = []
    for i in range(n):
        rng = SplitMix64(derive_seed(seed, i))
        count = 1 + rng.randbelow(2)
        ellipses = []
        for _ in range(count):
            cy = rng.uniform_range(0.25 * h, 0.75 * h, None)
            cx = rng.uniform_range(0.25 * w, 0.75 * w, None)
            a = rng.uniform_range(w / 5.2, w / 3.4, None)
            b = rng.uniform_range(h / 5.2, h / 3.4, None)
            theta = rng.uniform_range(0.0, math.pi, None)
            ellipses.append((cy, cx, a, b, theta))
        mask = _ellipse_member(h, w, ellipses, rows, cols)
        cov = np.zeros((h, w))
        for dy in sub:
            for dx in sub:
                cov += _ellipse_member(h, w, ellipses, rows + dy, cols + dx)
        cov /= 16.0
        img = BG_LEVEL + (FG_LEVEL - BG_LEVEL) * cov
        img = np.clip(img + NOISE_SIGMA * rng.normal((h, w)), 0.0, 1.0)
        samples.append(
            SegmentationSample(f"synth{i:03d}", Tensor(img[None]), mask, ellipses)
        )
    return samples


def save_dataset(samples, out_dir):
    """Write samples as <id>.pgm plus <id>_mask.pgm pairs."""
    os.makedirs(out_dir, exist_ok=True)
    for s in samples:
        save_pgm(s.image, os.path.join(out_dir, f"{s.id}.pgm"))
        save_pgm(s.mask.astype(np.float64), os.path.join(out_dir, f"{s.id}_mask.pgm"))


def load_dataset(data_dir):
    """Read every <id>.pgm / <id>_mask.pgm pair in the directory."""
    if not os.path.isdir(data_dir):
        raise DataError(f"data directory not found: {data_dir}")
    mask_names = sorted(
        f for f in os.listdir(data_dir) if f.endswith("_mask.pgm")
    )
    if not mask_names:
        raise DataError(f"no *_mask.pgm files in {data_dir}")
    samples = []
    for mname in mask_names:
        sid = mname[: -len("_mask.pgm")]
        ipath = os.path.join(data_dir, sid + ".pgm")
        if not os.path.isfile(ipath):
            raise DataError(f"mask {mname} has no matching image {sid}.pgm")
        image = load_pgm(ipath)
        mask = load_pgm(os.path.join(data_dir, mname)).data > 0.5
        if mask.shape != image.shape:
            raise DataError(f"{sid}: image {image.shape} and mask {mask.shape} differ")
        samples.append(SegmentationSample(sid, Tensor(image.data[None]), mask))
    return samples
