"""Pure-numpy implementations of the convolution/pooling hot kernels.

Layout is NCHW float64 throughout.  Convolution is cross-correlation
(no kernel flip).  These functions assume shapes were already validated
by the caller; they are the reference implementations the compiled
backend is tested against.
"""

import numpy as np

NAME = "numpy"


def _out_hw(h, w, k, stride, pad):
    return (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1


def _pad2d(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _im2col(xp, k, stride, ho, wo):
    # [B,C,Hp,Wp] -> [B, C*k*k, Ho*Wo] (copy; as_strided view is read-only use)
    b, c, hp, wp = xp.shape
    sb, sc, sh, sw = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, k, k, ho, wo),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(win).reshape(b, c * k * k, ho * wo)


def conv2d_forward(x, w, b, stride, pad):
    bs, cin, h, ww = x.shape
    cout, _, k, _ = w.shape
    ho, wo = _out_hw(h, ww, k, stride, pad)
    cols = _im2col(_pad2d(x, pad), k, stride, ho, wo)
    y = np.matmul(w.reshape(cout, cin * k * k), cols).reshape(bs, cout, ho, wo)
    if b is not None:
        y += b.reshape(1, cout, 1, 1)
    return np.ascontiguousarray(y)


def conv2d_backward_input(gy, w, h, ww, stride, pad):
    bs, cout, ho, wo = gy.shape
    _, cin, k, _ = w.shape
    # gcols[B,K,L] = W^T [K,Cout] @ gy[B,Cout,L]
    gcols = np.matmul(
        w.reshape(cout, cin * k * k).T, gy.reshape(bs, cout, ho * wo)
    ).reshape(bs, cin, k, k, ho, wo)
    gxp = np.zeros((bs, cin, h + 2 * pad, ww + 2 * pad))
    for ki in range(k):
        for kj in range(k):
            # stride-spaced slice: target cells are distinct, += is safe
            gxp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += gcols[
                :, :, ki, kj
            ]
    if pad:
        gxp = gxp[:, :, pad : pad + h, pad : pad + ww]
    return np.ascontiguousarray(gxp)


def conv2d_backward_weight(gy, x, k, stride, pad):
    bs, cin, h, ww = x.shape
    _, cout, ho, wo = gy.shape
    cols = _im2col(_pad2d(x, pad), k, stride, ho, wo)
    gw = np.matmul(gy.reshape(bs, cout, ho * wo), cols.transpose(0, 2, 1)).sum(axis=0)
    return np.ascontiguousarray(gw.reshape(cout, cin, k, k))


def dwconv2d_forward(x, w, b, stride, pad):
    # per-channel kxk; w is [C,k,k]
    bs, c, h, ww = x.shape
    _, k, _ = w.shape
    ho, wo = _out_hw(h, ww, k, stride, pad)
    xp = _pad2d(x, pad)
    y = np.zeros((bs, c, ho, wo))
    for ki in range(k):
        for kj in range(k):
            y += w[None, :, ki, kj, None, None] * xp[
                :, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride
            ]
    if b is not None:
        y += b.reshape(1, c, 1, 1)
    return y


def dwconv2d_backward_input(gy, w, h, ww, stride, pad):
    bs, c, ho, wo = gy.shape
    _, k, _ = w.shape
    gxp = np.zeros((bs, c, h + 2 * pad, ww + 2 * pad))
    for ki in range(k):
        for kj in range(k):
            gxp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += (
                w[None, :, ki, kj, None, None] * gy
            )
    if pad:
        gxp = gxp[:, :, pad : pad + h, pad : pad + ww]
    return np.ascontiguousarray(gxp)


def dwconv2d_backward_weight(gy, x, k, stride, pad):
    bs, c, h, ww = x.shape
    _, _, ho, wo = gy.shape
    xp = _pad2d(x, pad)
    gw = np.zeros((c, k, k))
    for ki in range(k):
        for kj in range(k):
            gw[:, ki, kj] = (
                gy * xp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
            ).sum(axis=(0, 2, 3))
    return gw


def maxpool2x2_forward(x):
    bs, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    win = x.reshape(bs, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(bs, c, ho, wo, 4)
    # np.argmax takes the first maximum, i.e. row-major order inside the window
    arg = np.argmax(win, axis=-1).astype(np.int64)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), np.ascontiguousarray(arg)


def maxpool2x2_backward(gy, arg):
    bs, c, ho, wo = gy.shape
    gwin = np.zeros((bs, c, ho, wo, 4))
    np.put_along_axis(gwin, arg[..., None], gy[..., None], axis=-1)
    gx = (
        gwin.reshape(bs, c, ho, wo, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(bs, c, ho * 2, wo * 2)
    )
    return np.ascontiguousarray(gx)
