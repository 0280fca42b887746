"""Fusion-Layer: gated recurrent scan over tokens plus a depthwise
convolutional stage, wrapped in a residual connection.

The recurrence is a two-gate product, H_t = sigmoid(forget path) *
tanh(candidate path), with H_0 = 0 and no separate cell state.  The
token "time" axis is the row-major spatial order of the feature map.
"""

import numpy as np

from . import ops
from .autodiff import Parameter, Tensor, bind
from .errors import ShapeError
from .initializers import he_uniform, orthogonal
from .ops import BatchNormState


class FusionLayerParams:
    """Recurrent weights, gate weights, and the depthwise conv stage."""

    def __init__(self, channels, rng, name="fusion"):
        c = channels
        self.channels = c

        def mat(nm):
            return Parameter(f"{name}.{nm}", he_uniform(rng, (c, c), c))

        def vec(nm):
            return Parameter(f"{name}.{nm}", np.zeros(c))

        self.w_f = mat("w_f")
        self.u_f = Parameter(f"{name}.u_f", orthogonal(rng, c))
        self.b_f = vec("b_f")
        self.w_c = mat("w_c")
        self.u_c = Parameter(f"{name}.u_c", orthogonal(rng, c))
        self.b_c = vec("b_c")
        self.w_g = mat("w_g")
        self.b_g = vec("b_g")
        self.dw_weight = Parameter(f"{name}.dw_weight", he_uniform(rng, (c, 1, 3, 3), 9))
        self.dw_bias = vec("dw_bias")
        self.bn = BatchNormState(c, name=f"{name}.bn")

    def params(self):
        return [
            self.w_f, self.u_f, self.b_f,
            self.w_c, self.u_c, self.b_c,
            self.w_g, self.b_g,
            self.dw_weight, self.dw_bias,
        ] + self.bn.params()


def lstm_scan(x, p):
    """Sequential scan over the token axis of x [B,N,C] -> H [B,N,C].

    H_t = sigmoid(X_t W_f + H_{t-1} U_f + b_f) * tanh(X_t W_c + H_{t-1} U_c + b_c)
    """
    if x.ndim != 3 or x.shape[2] != p.channels:
        raise ShapeError(f"lstm_scan: expected [B,N,{p.channels}] tokens, got {x.shape}")
    tape = x.tape
    w_f, u_f, b_f = bind(tape, p.w_f), bind(tape, p.u_f), bind(tape, p.b_f)
    w_c, u_c, b_c = bind(tape, p.w_c), bind(tape, p.u_c), bind(tape, p.b_c)
    b, n, c = x.shape
    h = Tensor(np.zeros((b, c)))
    outs = []
    for t in range(n):
        xt = ops.select(x, 1, t)
        f = ops.sigmoid(ops.add(ops.add(ops.matmul(xt, w_f), ops.matmul(h, u_f)), b_f))
        cand = ops.tanh(ops.add(ops.add(ops.matmul(xt, w_c), ops.matmul(h, u_c)), b_c))
        h = ops.mul(f, cand)
        outs.append(h)
    return ops.stack(outs, axis=1)


def temporal_gate(h, p):
    """G = sigmoid(H W_g + b_g); returns G * H."""
    if h.ndim != 3 or h.shape[2] != p.channels:
        raise ShapeError(f"temporal_gate: expected [B,N,{p.channels}], got {h.shape}")
    tape = h.tape
    g = ops.sigmoid(ops.add(ops.matmul(h, bind(tape, p.w_g)), bind(tape, p.b_g)))
    return ops.mul(g, h)


def fusion_forward(x, p, mode):
    """Full block on a feature map x [B,C,Hs,Ws]; output has the same shape.

    Tokens = row-major spatial flattening; scan, gate, reshape back, then
    ReLU(BN(DWConv(.))) and the residual Z = Y + X.
    """
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise ShapeError(f"fusion_forward: expected [B,{p.channels},H,W], got {x.shape}")
    b, c, hs, ws = x.shape
    tokens = ops.transpose(ops.reshape(x, (b, c, hs * ws)), (0, 2, 1))
    gated = temporal_gate(lstm_scan(tokens, p), p)
    z = ops.reshape(ops.transpose(gated, (0, 2, 1)), (b, c, hs, ws))
    tape = x.tape
    y = ops.depthwise_conv2d(z, bind(tape, p.dw_weight), bind(tape, p.dw_bias),
                             stride=1, padding=1)
    y = ops.relu(ops.batchnorm2d(y, p.bn, mode))
    return ops.add(y, x)
