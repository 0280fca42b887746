"""Differentiable operations.

Every op computes its forward value eagerly with numpy (or the compiled
kernel backend for conv/pool), records one node on the tape, and
captures a backward closure mapping the output gradient to the input
gradients.  Tensors without a tape are constants: they flow through the
math but get no gradient.

Shapes are validated here so kernel code can assume clean inputs.
"""

import numpy as np

from . import kernels
from .autodiff import Parameter, Tensor, as_tensor
from .errors import ShapeError, UsageError


def _tape_of(*tensors):
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise UsageError("operands were recorded on different tapes")
    return tape


def _ids(tape, *tensors):
    return tuple(t.node_id if (tape is not None and t.tape is tape) else None for t in tensors)


def _record(op, inputs, out, backward_fn):
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(out)
    nid = tape.record(op, _ids(tape, *inputs), backward_fn)
    return Tensor(out, tape, nid)


def _unbroadcast(g, shape):
    # fold a broadcast gradient back down to `shape`
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    ash, bsh = a.shape, b.shape
    return _record(
        "add", (a, b), a.data + b.data,
        lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh)),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    ash, bsh = a.shape, b.shape
    return _record(
        "sub", (a, b), a.data - b.data,
        lambda g: (_unbroadcast(g, ash), _unbroadcast(-g, bsh)),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return _record(
        "mul", (a, b), ad * bd,
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _record(
        "div", (a, b), out,
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def scale(a, s):
    a = as_tensor(a)
    s = float(s)
    return _record("scale", (a,), a.data * s, lambda g: (g * s,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims disagree, {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims do not broadcast, {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data

    def bwd(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return _record("matmul", (a, b), np.matmul(ad, bd), bwd)


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    old = a.shape
    return _record("reshape", (a,), out, lambda g: (g.reshape(old),))


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} is not a permutation for rank {a.ndim}")
    inv = tuple(np.argsort(axes))
    return _record(
        "transpose", (a,), np.ascontiguousarray(a.data.transpose(axes)),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
    )


def select(a, axis, index):
    """Pick one index along an axis (the axis is dropped)."""
    a = as_tensor(a)
    axis = int(axis)
    index = int(index)
    if not 0 <= axis < a.ndim:
        raise ShapeError(f"select: axis {axis} out of range for rank {a.ndim}")
    if not 0 <= index < a.shape[axis]:
        raise ShapeError(f"select: index {index} out of range for axis of size {a.shape[axis]}")
    out = np.take(a.data, index, axis=axis)
    ash = a.shape

    def bwd(g):
        gx = np.zeros(ash)
        sl = [slice(None)] * len(ash)
        sl[axis] = index
        gx[tuple(sl)] = g
        return (gx,)

    return _record("select", (a,), np.ascontiguousarray(out), bwd)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack: need at least one tensor")
    sh = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != sh:
            raise ShapeError(f"stack: mixed shapes {sh} and {t.shape}")
    axis = int(axis)
    out = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        return tuple(np.ascontiguousarray(np.take(g, i, axis=axis)) for i in range(len(tensors)))

    return _record("stack", tuple(tensors), out, bwd)


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(sorted(a % ndim for a in axis))
    if len(set(axes)) != len(axes):
        raise ShapeError(f"duplicate reduction axes {axis}")
    return axes


def sum_reduce(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    ash = a.shape

    def bwd(g):
        if not keepdims:
            for ax in axes:
                g = np.expand_dims(g, ax)
        return (np.ascontiguousarray(np.broadcast_to(g, ash)),)

    return _record("sum", (a,), out, bwd)


def mean_reduce(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return scale(sum_reduce(a, axis, keepdims), 1.0 / n)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record("exp", (a,), out, lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    ad = a.data
    return _record("log", (a,), np.log(ad), lambda g: (g / ad,))


def sigmoid(a):
    a = as_tensor(a)
    ad = a.data
    # branch on sign so exp never overflows
    out = np.where(ad >= 0, 1.0 / (1.0 + np.exp(-np.abs(ad))), np.exp(-np.abs(ad)) / (1.0 + np.exp(-np.abs(ad))))
    return _record("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def relu(a):
    a = as_tensor(a)
    ad = a.data
    return _record("relu", (a,), np.maximum(ad, 0.0), lambda g: (g * (ad > 0),))


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    ad = a.data
    m = ad.max(axis=axis, keepdims=True)
    z = ad - m
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _record("log_softmax", (a,), out, bwd)


def softmax(a, axis=-1):
    return exp(log_softmax(a, axis))


def masked_softmax(a, mask, axis=-1):
    """Softmax over the entries where mask is nonzero; masked entries are exactly 0.

    `mask` is a constant 0/1 array broadcastable to `a`.  A fully masked
    row yields all zeros.  Stable for any logit magnitudes: disallowed
    logits are replaced by the row max before exponentiation.
    """
    a = as_tensor(a)
    ad = a.data
    mk = np.broadcast_to(np.asarray(mask) != 0, ad.shape)
    with np.errstate(invalid="ignore"):
        m = np.where(mk, ad, -np.inf).max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(mk, np.exp(ad - m), 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    if np.any(denom == 0.0):  # allowed entries contribute >= exp(0); 0 means none allowed
        raise UsageError("masked_softmax: a row has no allowed entries")
    out = e / denom

    def bwd(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record("masked_softmax", (a,), out, bwd)


def dropout(a, rate, rng, mode):
    """Inverted dropout; identity when rate is 0 or mode is not 'train'."""
    a = as_tensor(a)
    rate = float(rate)
    if not 0.0 <= rate < 1.0:
        raise UsageError(f"dropout rate must be in [0, 1), got {rate}")
    if mode != "train" or rate == 0.0:
        return a
    if rng is None:
        raise UsageError("dropout with rate > 0 in train mode requires an rng")
    keep = (rng.uniform(a.shape) >= rate) / (1.0 - rate)
    return _record("dropout", (a,), a.data * keep, lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# spatial ops (hot kernels live in richunet.kernels)

def _check_4d(op, x):
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected NCHW input, got shape {x.shape}")


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-d cross-correlation, NCHW x [B,Cin,H,W] with w [Cout,Cin,k,k]."""
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    _check_4d("conv2d", x)
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: weight must be [Cout,Cin,k,k], got {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(f"conv2d: weight expects {w.shape[1]} input channels, got {x.shape[1]}")
    stride, pad = int(stride), int(padding)
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d: bad stride/padding ({stride}, {pad})")
    bs, cin, h, ww = x.shape
    cout, _, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (ww + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {k} with padding {pad} does not fit input {h}x{ww}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d: bias must have shape ({cout},), got {b.shape}")
    xd, wd = x.data, w.data
    bk = kernels.backend
    out = bk.conv2d_forward(xd, wd, None if b is None else b.data, stride, pad)

    def bwd(g):
        g = np.ascontiguousarray(g)
        gx = bk.conv2d_backward_input(g, wd, h, ww, stride, pad)
        gw = bk.conv2d_backward_weight(g, xd, k, stride, pad)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    inputs = (x, w) if b is None else (x, w, b)
    return _record("conv2d", inputs, out, bwd)


def depthwise_conv2d(x, w, b=None, stride=1, padding=1):
    """Per-channel kxk convolution (groups == channels).  w is [C,1,k,k]."""
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    _check_4d("depthwise_conv2d", x)
    if w.ndim != 4 or w.shape[1] != 1 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"depthwise_conv2d: weight must be [C,1,k,k], got {w.shape}")
    if w.shape[0] != x.shape[1]:
        raise ShapeError(
            f"depthwise_conv2d: weight has {w.shape[0]} channels, input has {x.shape[1]}"
        )
    stride, pad = int(stride), int(padding)
    if stride < 1 or pad < 0:
        raise ShapeError(f"depthwise_conv2d: bad stride/padding ({stride}, {pad})")
    bs, c, h, ww = x.shape
    k = w.shape[2]
    if h + 2 * pad < k or ww + 2 * pad < k:
        raise ShapeError(f"depthwise_conv2d: kernel {k} with padding {pad} does not fit {h}x{ww}")
    if b is not None and b.shape != (c,):
        raise ShapeError(f"depthwise_conv2d: bias must have shape ({c},), got {b.shape}")
    xd, wd = x.data, np.ascontiguousarray(w.data.reshape(c, k, k))
    bk = kernels.backend
    out = bk.dwconv2d_forward(xd, wd, None if b is None else b.data, stride, pad)

    def bwd(g):
        g = np.ascontiguousarray(g)
        gx = bk.dwconv2d_backward_input(g, wd, h, ww, stride, pad)
        gw = bk.dwconv2d_backward_weight(g, xd, k, stride, pad).reshape(c, 1, k, k)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    inputs = (x, w) if b is None else (x, w, b)
    return _record("depthwise_conv2d", inputs, out, bwd)


def maxpool2d(x, k=2, stride=2):
    """2x2/stride-2 max pooling; ties go to the first cell in row-major order."""
    x = as_tensor(x)
    _check_4d("maxpool2d", x)
    if k != 2 or stride != 2:
        raise UsageError(f"maxpool2d: only k=2, stride=2 is supported, got k={k} stride={stride}")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"maxpool2d: spatial dims must be divisible by 2, got {x.shape}")
    bk = kernels.backend
    out, arg = bk.maxpool2x2_forward(x.data)

    def bwd(g):
        return (bk.maxpool2x2_backward(np.ascontiguousarray(g), arg),)

    return _record("maxpool2d", (x,), out, bwd)


def nearest_upsample2x(x):
    """Nearest-neighbour 2x upsampling; backward sums each 2x2 block."""
    x = as_tensor(x)
    _check_4d("nearest_upsample2x", x)
    bs, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def bwd(g):
        return (g.reshape(bs, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _record("nearest_upsample2x", (x,), out, bwd)


def global_avg_pool(x):
    """Mean over the spatial dims, kept as [B,C,1,1]."""
    x = as_tensor(x)
    _check_4d("global_avg_pool", x)
    bs, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def bwd(g):
        return (np.broadcast_to(g / (h * w), (bs, c, h, w)).copy(),)

    return _record("global_avg_pool", (x,), out, bwd)


class BatchNormState:
    """Learnable scale/shift plus running statistics for one channel axis.

    eps defaults far below float32 habits: in float64 the normalized
    batch variance must sit within 1e-9 of 1, and eps/var is the bias.
    """

    __slots__ = ("name", "gamma", "beta", "running_mean", "running_var",
                 "eps", "momentum")

    def __init__(self, channels, name="bn", eps=1e-12, momentum=0.1):
        if eps <= 0:
            raise UsageError(f"batchnorm eps must be positive, got {eps}")
        if not 0.0 < momentum < 1.0:
            raise UsageError(f"batchnorm momentum must be in (0,1), got {momentum}")
        self.name = name
        self.gamma = Parameter(name + ".gamma", np.ones(channels))
        self.beta = Parameter(name + ".beta", np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.eps = float(eps)
        self.momentum = float(momentum)

    def params(self):
        return [self.gamma, self.beta]


def batchnorm2d(x, state, mode):
    """Per-channel batch normalization over (B, H, W).

    Train mode normalizes with biased batch statistics and updates the
    running arrays in place: run = (1 - momentum) * run + momentum * batch.
    Eval mode normalizes with the running statistics (no update).
    """
    x = as_tensor(x)
    _check_4d("batchnorm2d", x)
    c = x.shape[1]
    if state.gamma.shape != (c,):
        raise ShapeError(
            f"batchnorm2d: state is for {state.gamma.shape[0]} channels, input has {c}"
        )
    if mode not in ("train", "eval"):
        raise UsageError(f"batchnorm2d: mode must be 'train' or 'eval', got {mode!r}")
    tape = x.tape
    gamma = tape.param(state.gamma) if tape is not None else Tensor(state.gamma.data)
    beta = tape.param(state.beta) if tape is not None else Tensor(state.beta.data)
    xd, gd, bd = x.data, gamma.data, beta.data
    bs, _, h, w = xd.shape
    n = bs * h * w
    m = state.momentum

    if mode == "train":
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        state.running_mean[...] = (1.0 - m) * state.running_mean + m * mu
        state.running_var[...] = (1.0 - m) * state.running_var + m * var
    else:
        mu = state.running_mean.copy()
        var = state.running_var.copy()

    std = np.sqrt(var + state.eps)
    xhat = (xd - mu[None, :, None, None]) / std[None, :, None, None]
    out = gd[None, :, None, None] * xhat + bd[None, :, None, None]

    def bwd(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        if mode == "train":
            # whole-batch jacobian: mean/var both depend on x
            dx = (gd / (n * std))[None, :, None, None] * (
                n * g
                - dbeta[None, :, None, None]
                - xhat * dgamma[None, :, None, None]
            )
        else:
            dx = g * (gd / std)[None, :, None, None]
        return dx, dgamma, dbeta

    return _record("batchnorm2d", (x, gamma, beta), out, bwd)
