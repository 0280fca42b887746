"""Built-in invariant checks, runnable without pytest.

Each suite exercises one structural guarantee of the package: gradient
agreement with finite differences, attention sparsity, residual
identities, gate ranges, metric cross-checks, and file round-trips.
"""

import os
import tempfile

import numpy as np

from .attention import KAttentionParams, k_attention_forward, topk_select
from .autodiff import Tape, Tensor
from .data import synth_dataset
from .fdcheck import check_gradients, spread_uniform
from .fusion import FusionLayerParams, fusion_forward
from .metrics import dice, hd95, iou
from .msagf import MsagfParams, global_attention, msagf_fuse, spatial_attention
from .network import RichUNet, micro_config
from .ops import conv2d, matmul, relu, sigmoid, softmax
from .pgm import load_pgm, save_pgm
from .rng import SplitMix64


def _suite_gradients():
    rng = SplitMix64(11)

    def f_mat(tape, ts):
        return matmul(ts[0], ts[1])

    err = check_gradients(f_mat, [rng.normal((3, 4)), rng.normal((4, 2))])
    assert err < 1e-4, f"matmul gradient error {err:.3g}"

    def f_conv(tape, ts):
        return relu(conv2d(ts[0], ts[1], ts[2], stride=1, padding=1))

    err = check_gradients(
        f_conv,
        [spread_uniform(rng, (1, 2, 5, 5)), rng.normal((3, 2, 3, 3)),
         rng.normal((3,))])
    assert err < 1e-4, f"conv2d gradient error {err:.3g}"

    def f_soft(tape, ts):
        return softmax(ts[0])

    err = check_gradients(f_soft, [rng.normal((4, 6))])
    assert err < 1e-4, f"softmax gradient error {err:.3g}"


def _suite_attention():
    rng = SplitMix64(23)
    p = KAttentionParams(channels=8, num_heads=2, topk=3, drop_rate=0.0,
                         rng=rng, name="st_attn")
    x = rng.normal((2, 5, 8))
    tape = Tape("eval")
    out = k_attention_forward(tape.input(x), p, mode="eval")
    assert out.shape == x.shape, "attention must preserve shape"

    s = rng.normal((2, 2, 5, 5))
    idx = topk_select(s, 3)
    taken = np.take_along_axis(s, idx, axis=-1)
    assert (taken >= np.sort(s, axis=-1)[..., 2:3]).all(), \
        "top-k selection must keep the k largest scores"

    pk = KAttentionParams(channels=8, num_heads=2, topk=5, drop_rate=0.0,
                          rng=SplitMix64(23), name="st_attn")
    dense = k_attention_forward(Tape("eval").input(x), pk, mode="eval")
    pk2 = KAttentionParams(channels=8, num_heads=2, topk=5, drop_rate=0.0,
                           rng=SplitMix64(23), name="st_attn")
    dense2 = k_attention_forward(Tape("eval").input(x), pk2, mode="eval")
    assert np.array_equal(dense.data, dense2.data), \
        "attention must be deterministic in eval mode"

    pz = KAttentionParams(channels=8, num_heads=2, topk=3, drop_rate=0.0,
                          rng=rng, name="st_zero")
    pz.w_o.data[:] = 0.0
    out = k_attention_forward(Tape("eval").input(x), pz, mode="eval")
    assert np.array_equal(out.data, x), \
        "zero output projection must leave only the residual path"


def _suite_fusion():
    rng = SplitMix64(37)
    p = FusionLayerParams(channels=4, rng=rng, name="st_fuse")
    zero = np.zeros((1, 4, 4, 4))
    tape = Tape("eval")
    out = fusion_forward(tape.input(zero), p, mode="eval")
    assert out.shape == zero.shape, "fusion must preserve shape"

    x = rng.normal((1, 4, 4, 4))
    a = fusion_forward(Tape("eval").input(x), p, mode="eval").data
    xp = x[:, :, ::-1, :].copy()
    b = fusion_forward(Tape("eval").input(xp), p, mode="eval").data
    assert not np.allclose(a[:, :, ::-1, :], b), \
        "fusion must be sensitive to scan order"


def _suite_msagf():
    rng = SplitMix64(41)
    p = MsagfParams(channels=8, reduction=4, rng=rng, name="st_ms")
    x1 = rng.normal((2, 8, 6, 6))
    x2 = rng.normal((2, 8, 6, 6))
    tape = Tape("eval")
    t1, t2 = tape.input(x1), tape.input(x2)
    wg = global_attention(t1, t2, p)
    ws = spatial_attention(t1, t2, p, mode="eval")
    assert (wg.data > 0).all() and (wg.data < 1).all(), \
        "channel gate must stay strictly inside (0, 1)"
    assert (ws.data > 0).all() and (ws.data < 1).all(), \
        "spatial gate must stay strictly inside (0, 1)"
    out = msagf_fuse(t1, t2, p, mode="eval")
    assert out.shape == x1.shape, "fusion output must match input shape"
    bound = np.abs(x1) * wg.data + np.abs(x2) * ws.data
    assert (np.abs(out.data) <= bound + 1e-12).all(), \
        "gated sum must be bounded by the gated magnitudes"


def _suite_network():
    cfg = micro_config()
    net = RichUNet(cfg, SplitMix64(7))
    x = SplitMix64(8).normal((1, cfg.in_channels, 32, 32))
    tape = Tape("eval")
    out = net.forward(tape.input(x), mode="eval")
    assert out.shape == (1, cfg.num_classes, 32, 32), \
        f"unexpected output shape {out.shape}"
    assert np.isfinite(out.data).all(), "forward pass produced non-finite values"
    out2 = net.forward(Tape("eval").input(x), mode="eval")
    assert np.array_equal(out.data, out2.data), \
        "eval forward must be bit-deterministic"


def _suite_metrics():
    a = np.zeros((8, 8), dtype=np.int64)
    a[2:6, 2:6] = 1
    assert dice(a, a) == 1.0, "dice of identical masks must be 1"
    assert iou(a, a) == 1.0, "iou of identical masks must be 1"
    assert hd95(a, a) == 0.0, "hd95 of identical masks must be 0"
    b = np.zeros((8, 8), dtype=np.int64)
    b[2:6, 3:7] = 1
    inter = float(np.logical_and(a, b).sum())
    d_ref = 2.0 * inter / (a.sum() + b.sum())
    i_ref = inter / float(np.logical_or(a, b).sum())
    assert abs(dice(a, b) - d_ref) < 1e-15, "dice disagrees with set formula"
    assert abs(iou(a, b) - i_ref) < 1e-15, "iou disagrees with set formula"
    d = dice(a, b)
    assert abs(iou(a, b) - d / (2.0 - d)) < 1e-12, \
        "iou must equal dice/(2-dice)"


def _suite_io():
    rng = SplitMix64(53)
    img = np.round(rng.uniform((9, 7)) * 255.0) / 255.0
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "t.pgm")
        save_pgm(img, path)
        back = load_pgm(path)
        assert np.allclose(back.data, img, atol=0.5 / 255.0), \
            "pgm round-trip exceeded quantization error"
    samples = synth_dataset(2, 16, 16, seed=99)
    again = synth_dataset(2, 16, 16, seed=99)
    for s, t in zip(samples, again):
        assert np.array_equal(s.image.data, t.image.data), \
            "synthetic data must be seed-deterministic"
        assert 0 < s.mask.sum() <= 0.6 * s.mask.size, \
            "mask coverage out of range"


_SUITES = [
    ("gradients", _suite_gradients),
    ("attention", _suite_attention),
    ("fusion", _suite_fusion),
    ("msagf", _suite_msagf),
    ("network", _suite_network),
    ("metrics", _suite_metrics),
    ("io", _suite_io),
]


def run_selftest(print_fn=print):
    """Run every suite; report pass/fail per suite.  Returns 0 or 3."""
    failures = 0
    for name, fn in _SUITES:
        try:
            fn()
        except AssertionError as exc:
            failures += 1
            print_fn(f"FAIL {name}: {exc}")
        else:
            print_fn(f"PASS {name}")
    if failures:
        print_fn(f"{failures} of {len(_SUITES)} suites failed")
        return 3
    print_fn(f"all {len(_SUITES)} suites passed")
    return 0
