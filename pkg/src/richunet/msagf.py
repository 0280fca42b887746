"""MSAGF: multi-scale adaptive gating fusion of two same-shape feature maps.

A channel gate (squeeze-excite style, from the global average of x1+x2)
weights x1; a spatial gate (depthwise conv + BN + sigmoid of x1+x2)
weights x2; the gated maps are summed.
"""

from . import ops
from .autodiff import Parameter, bind
from .errors import ConfigError, ShapeError
from .initializers import he_uniform
from .ops import BatchNormState


class MsagfParams:
    """Channel-gate 1x1 convs (bias-free), spatial-gate depthwise conv + BN."""

    def __init__(self, channels, reduction, rng, name="msagf"):
        if reduction < 1:
            raise ConfigError(f"reduction must be >= 1, got {reduction}")
        if channels % reduction != 0:
            raise ConfigError(
                f"channels {channels} not divisible by reduction {reduction}"
            )
        self.channels = channels
        self.reduction = reduction
        cr = channels // reduction
        self.w1 = Parameter(f"{name}.w1", he_uniform(rng, (cr, channels, 1, 1), channels))
        self.w2 = Parameter(f"{name}.w2", he_uniform(rng, (channels, cr, 1, 1), cr))
        self.dw_weight = Parameter(f"{name}.dw_weight", he_uniform(rng, (channels, 1, 3, 3), 9))
        self.bn = BatchNormState(channels, name=f"{name}.bn")

    def params(self):
        return [self.w1, self.w2, self.dw_weight] + self.bn.params()


def _check_pair(op, x1, x2, channels):
    if x1.ndim != 4:
        raise ShapeError(f"{op}: expected NCHW inputs, got {x1.shape}")
    if x1.shape != x2.shape:
        raise ShapeError(f"{op}: input shapes differ, {x1.shape} vs {x2.shape}")
    if x1.shape[1] != channels:
        raise ShapeError(f"{op}: params are for {channels} channels, inputs have {x1.shape[1]}")


def global_attention(x1, x2, p):
    """Channel gate W_g [B,C,1,1] = sigmoid(W2 @ relu(W1 @ gap(x1+x2)))."""
    _check_pair("global_attention", x1, x2, p.channels)
    s = ops.add(x1, x2)
    g = ops.global_avg_pool(s)
    tape = s.tape
    h = ops.relu(ops.conv2d(g, bind(tape, p.w1)))
    return ops.sigmoid(ops.conv2d(h, bind(tape, p.w2)))


def spatial_attention(x1, x2, p, mode):
    """Spatial gate W_s [B,C,H,W] = sigmoid(BN(DWConv(x1+x2)))."""
    _check_pair("spatial_attention", x1, x2, p.channels)
    s = ops.add(x1, x2)
    y = ops.depthwise_conv2d(s, bind(s.tape, p.dw_weight), None, stride=1, padding=1)
    return ops.sigmoid(ops.batchnorm2d(y, p.bn, mode))


def combine(x1, x2, w_g, w_s):
    """x1 * w_g (broadcast over space) + x2 * w_s."""
    return ops.add(ops.mul(x1, w_g), ops.mul(x2, w_s))


def msagf_fuse(x1, x2, p, mode):
    """Fused map = x1 gated by the channel gate + x2 gated by the spatial gate."""
    _check_pair("msagf_fuse", x1, x2, p.channels)
    return combine(x1, x2, global_attention(x1, x2, p), spatial_attention(x1, x2, p, mode))
