"""Finite-difference gradient checking.

The analytic gradient of a random weighted sum of the outputs is
compared against central differences at sampled coordinates.  Works on
any closure that rebuilds its forward pass from the same input arrays,
so in-place perturbation is visible on the next call.
"""

import numpy as np

from .autodiff import Tape, Tensor, backward
from .ops import mul, sum_reduce
from .rng import SplitMix64


def spread_uniform(rng, shape):
    """Random-sign values with magnitudes spread over [0.1, 1.0].

    Magnitudes are a shuffled ladder with gaps >= 0.9/size and nothing
    within 0.1 of zero, so relu/max/top-k decisions cannot flip under
    the 1e-5 probe used for differencing.
    """
    size = int(np.prod(shape))
    mags = 0.1 + 0.9 * (rng.permutation(size).astype(np.float64) + 0.5) / size
    signs = np.where(rng.uniform((size,)) < 0.5, -1.0, 1.0)
    return np.ascontiguousarray((mags * signs).reshape(shape))


def check_gradients(make_output, arrays, params=(), n_coords=6, h=1e-5,
                    floor=1e-3, seed=2024):
    """Max relative error between analytic and numeric gradients.

    make_output(tape, tensors) -> Tensor; `arrays` become tape inputs,
    `params` are Parameters bound inside make_output.  Stochastic pieces
    inside make_output must reseed themselves so every call replays the
    same draws.
    """
    arrays = [np.ascontiguousarray(a, dtype=np.float64) for a in arrays]

    def run():
        tape = Tape("train")
        tensors = [tape.input(a) for a in arrays]
        return tape, tensors, make_output(tape, tensors)

    tape, tensors, out = run()
    wrng = SplitMix64(seed)
    w = wrng.uniform_range(-1.0, 1.0, out.shape)
    loss = sum_reduce(mul(out, Tensor(w)))
    grads = backward(tape, loss)

    def loss_value():
        _, _, o = run()
        return float((o.data * w).sum())

    targets = []
    for arr, t in zip(arrays, tensors):
        g = grads.get(t.node_id)
        targets.append((arr, None if g is None else g.data))
    for p in params:
        nid = tape.param_node_id(p)
        g = grads.get(nid) if nid is not None else None
        targets.append((p.data, None if g is None else g.data))

    max_rel = 0.0
    for arr, g in targets:
        gd = np.zeros_like(arr) if g is None else g
        size = arr.size
        take = min(n_coords, size)
        idxs = wrng.permutation(size)[:take]
        for idx in idxs:
            orig = arr.flat[idx]
            arr.flat[idx] = orig + h
            fp = loss_value()
            arr.flat[idx] = orig - h
            fm = loss_value()
            arr.flat[idx] = orig
            num = (fp - fm) / (2.0 * h)
            ana = gd.flat[idx]
            rel = abs(ana - num) / max(abs(ana), abs(num), floor)
            max_rel = max(max_rel, rel)
    return max_rel
