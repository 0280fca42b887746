"""K-Attention: sparse top-k multi-head self-attention over token sequences.

Each query scores every key, keeps only its top-k scores, and softmaxes
over that sparse support.  Heads are concatenated and passed through a
single output projection, and the block is residual.
"""

import logging
import math

import numpy as np

from . import ops
from .autodiff import Parameter, Tensor, bind
from .errors import ConfigError, ShapeError
from .initializers import he_uniform

log = logging.getLogger(__name__)

_clamp_logged = False


class KAttentionParams:
    """Projection weights plus the head/top-k/dropout hyperparameters."""

    def __init__(self, channels, num_heads, topk, drop_rate=0.1, scale=None,
                 rng=None, name="kattn"):
        if channels % num_heads != 0:
            raise ConfigError(
                f"channels {channels} not divisible by num_heads {num_heads}"
            )
        if topk < 1:
            raise ConfigError(f"topk must be >= 1, got {topk}")
        if not 0.0 <= drop_rate < 1.0:
            raise ConfigError(f"drop_rate must be in [0,1), got {drop_rate}")
        self.channels = channels
        self.num_heads = num_heads
        self.head_dim = channels // num_heads
        self.topk = int(topk)
        self.drop_rate = float(drop_rate)
        self.scale = 1.0 / math.sqrt(self.head_dim) if scale is None else float(scale)
        if self.scale <= 0.0:
            raise ConfigError(f"scale must be positive, got {self.scale}")

        def mat(nm):
            return Parameter(f"{name}.{nm}", he_uniform(rng, (channels, channels), channels))

        self.w_q = mat("w_q")
        self.w_k = mat("w_k")
        self.w_v = mat("w_v")
        self.w_o = mat("w_o")

    def params(self):
        return [self.w_q, self.w_k, self.w_v, self.w_o]


def _split_heads(t, heads, head_dim):
    b, n, _ = t.shape
    return ops.transpose(ops.reshape(t, (b, n, heads, head_dim)), (0, 2, 1, 3))


def _merge_heads(t):
    b, h, n, dk = t.shape
    return ops.reshape(ops.transpose(t, (0, 2, 1, 3)), (b, n, h * dk))


def project_qkv(x, p):
    """x [B,N,C] -> per-head Q, K, V, each [B,heads,N,C/heads]."""
    if x.ndim != 3 or x.shape[2] != p.channels:
        raise ShapeError(
            f"project_qkv: expected [B,N,{p.channels}] tokens, got {x.shape}"
        )
    tape = x.tape
    q = ops.matmul(x, bind(tape, p.w_q))
    k = ops.matmul(x, bind(tape, p.w_k))
    v = ops.matmul(x, bind(tape, p.w_v))
    return (
        _split_heads(q, p.num_heads, p.head_dim),
        _split_heads(k, p.num_heads, p.head_dim),
        _split_heads(v, p.num_heads, p.head_dim),
    )


def topk_select(scores, k):
    """Indices of the min(k, N) largest entries per last-axis row.

    Ties break toward the lower index.  k > N clamps to N (logged once
    per process).
    """
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    n = s.shape[-1]
    if k < 1:
        raise ConfigError(f"topk must be >= 1, got {k}")
    if k > n:
        global _clamp_logged
        if not _clamp_logged:
            log.info("top-k %d exceeds row length %d; clamping to %d", k, n, n)
            _clamp_logged = True
        k = n
    # stable sort of -s: equal scores keep ascending index order
    order = np.argsort(-s, axis=-1, kind="stable")
    return order[..., :k]


def topk_mask(scores, k):
    """Binary mask with True at each row's top-k positions."""
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    idx = topk_select(scores, k)
    mask = np.zeros(s.shape, dtype=bool)
    np.put_along_axis(mask, idx, True, axis=-1)
    return mask


def k_attention_forward(x, p, mode, rng=None):
    """Full block: QKV, scaled scores, top-k mask, softmax, dropout,
    weighted values, head merge, output projection, residual."""
    q, k, v = project_qkv(x, p)
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), p.scale)
    mask = topk_mask(scores, p.topk)
    attn = ops.masked_softmax(scores, mask, axis=-1)
    attn = ops.dropout(attn, p.drop_rate, rng, mode)
    y = _merge_heads(ops.matmul(attn, v))
    y = ops.matmul(y, bind(x.tape, p.w_o))
    return ops.add(y, x)
