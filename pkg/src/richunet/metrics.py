"""Binary segmentation metrics: Dice, IoU, HD95.

Masks are 2-d boolean arrays of equal shape.  HD95 works on boundary
pixels (4-connectivity, out-of-bounds counts as background) and uses
the linear-interpolation percentile convention.
"""

import numpy as np

from .autodiff import Tensor
from .errors import MetricUndefinedError, ShapeError


def _as_mask(m):
    a = np.asarray(m)
    if a.ndim != 2:
        raise ShapeError(f"mask must be 2-d, got shape {a.shape}")
    if a.dtype != bool:
        vals = np.unique(a)
        if not np.all(np.isin(vals, (0, 1))):
            raise ShapeError("mask must be binary")
        a = a.astype(bool)
    return a


def _pair(pred, gt):
    p, g = _as_mask(pred), _as_mask(gt)
    if p.shape != g.shape:
        raise ShapeError(f"mask shapes differ: {p.shape} vs {g.shape}")
    return p, g


def dice(pred, gt):
    """2|A&B| / (|A|+|B|); 1.0 when both masks are empty."""
    p, g = _pair(pred, gt)
    inter = int(np.count_nonzero(p & g))
    total = int(np.count_nonzero(p)) + int(np.count_nonzero(g))
    if total == 0:
        return 1.0
    return 2.0 * inter / total


def iou(pred, gt):
    """|A&B| / |A or B|; 1.0 when both masks are empty."""
    p, g = _pair(pred, gt)
    inter = int(np.count_nonzero(p & g))
    union = int(np.count_nonzero(p | g))
    if union == 0:
        return 1.0
    return inter / union


def boundary(mask):
    """(K,2) array of foreground pixels with a 4-neighbor that is
    background or out of bounds."""
    m = _as_mask(mask)
    if not m.any():
        return np.zeros((0, 2), dtype=np.int64)
    padded = np.pad(m, 1)  # frame of background: image edge counts as background
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    edge = m & ~interior
    return np.argwhere(edge).astype(np.int64)


def _percentile_linear(sorted_vals, q):
    # linear interpolation between closest order statistics
    n = sorted_vals.shape[0]
    if n == 1:
        return float(sorted_vals[0])
    pos = (n - 1) * q
    lo = int(np.floor(pos))
    frac = pos - lo
    if lo + 1 >= n:
        return float(sorted_vals[-1])
    return float(sorted_vals[lo] + frac * (sorted_vals[lo + 1] - sorted_vals[lo]))


def _directed_d95(src, dst):
    # 95th percentile of nearest-boundary distances from src to dst
    diff = src[:, None, :] - dst[None, :, :]
    d = np.sqrt((diff.astype(np.float64) ** 2).sum(axis=2)).min(axis=1)
    return _percentile_linear(np.sort(d), 0.95)


def hd95(pred, gt):
    """Symmetric 95th-percentile Hausdorff distance in pixels.

    Undefined (raises MetricUndefinedError) when either mask is empty.
    """
    p, g = _pair(pred, gt)
    if not p.any() or not g.any():
        raise MetricUndefinedError("hd95 undefined for an empty mask")
    bp, bg = boundary(p), boundary(g)
    return max(_directed_d95(bp, bg), _directed_d95(bg, bp))


def mask_from_logits(logits):
    """Per-pixel argmax over the class axis; class 1 is foreground.

    Accepts [K,H,W] or [B,K,H,W] (returns [H,W] or [B,H,W] boolean).
    """
    a = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if a.ndim == 3:
        return np.argmax(a, axis=0) == 1
    if a.ndim == 4:
        return np.argmax(a, axis=1) == 1
    raise ShapeError(f"logits must be [K,H,W] or [B,K,H,W], got {a.shape}")
