import numpy as np
import pytest

from richunet.autodiff import Parameter, Tape, Tensor, backward
from richunet.errors import ShapeError, UsageError
from richunet.ops import (BatchNormState, add, batchnorm2d, conv2d,
                          depthwise_conv2d, dropout, global_avg_pool,
                          log_softmax, masked_softmax, matmul, maxpool2d,
                          mean_reduce, mul, nearest_upsample2x, relu, reshape,
                          scale, select, sigmoid, softmax, stack, sub,
                          sum_reduce, tanh, transpose)
from richunet.rng import SplitMix64

from oracles import (conv2d_oracle, dwconv2d_oracle, gap_oracle,
                     matmul_oracle, maxpool2x2_oracle, upsample2x_oracle)


# ---------------------------------------------------------------- matmul

def test_matmul_identity():
    a = np.array([[1.5, -2.0], [0.25, 4.0]])
    out = matmul(Tensor(np.eye(2)), Tensor(a))
    assert np.array_equal(out.data, a)


def test_matmul_known_product():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    out = matmul(Tensor(a), Tensor(b))
    assert np.array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])
    assert np.allclose(out.data, matmul_oracle(a, b), atol=0, rtol=0)


def test_matmul_zero_left():
    b = SplitMix64(1).normal((3, 4))
    out = matmul(Tensor(np.zeros((2, 3))), Tensor(b))
    assert out.shape == (2, 4)
    assert not out.data.any()


def test_matmul_random_vs_loop_oracle(rng):
    a = rng.normal((5, 7))
    b = rng.normal((7, 3))
    out = matmul(Tensor(a), Tensor(b))
    assert np.allclose(out.data, matmul_oracle(a, b), rtol=1e-13, atol=1e-13)


def test_matmul_batched_broadcast(rng):
    a = rng.normal((2, 3, 4, 5))
    b = rng.normal((5, 6))
    out = matmul(Tensor(a), Tensor(b))
    assert out.shape == (2, 3, 4, 6)
    assert np.allclose(out.data, a @ b)


def test_matmul_shape_errors(rng):
    with pytest.raises(ShapeError):
        matmul(Tensor(rng.normal((2, 3))), Tensor(rng.normal((4, 2))))
    with pytest.raises(ShapeError):
        matmul(Tensor(rng.normal((3,))), Tensor(rng.normal((3, 2))))


# ---------------------------------------------------------------- conv2d

def test_conv2d_one_by_one_identity(rng):
    x = rng.normal((2, 1, 4, 4))
    w = np.ones((1, 1, 1, 1))
    out = conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(1)))
    assert np.array_equal(out.data, x)


def test_conv2d_counting_case():
    x = np.ones((1, 1, 3, 3))
    w = np.ones((1, 1, 3, 3))
    out = conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(1)))
    assert out.shape == (1, 1, 1, 1)
    assert out.data.reshape(()) == 9.0


def test_conv2d_strided_vs_oracle(rng):
    x = rng.normal((1, 1, 5, 5))
    w = rng.normal((1, 1, 3, 3))
    b = rng.normal((1,))
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1)
    assert out.shape == (1, 1, 3, 3)
    assert np.allclose(out.data, conv2d_oracle(x, w, b, 2, 1),
                       rtol=1e-12, atol=1e-12)


def test_conv2d_multichannel_vs_oracle(rng):
    x = rng.normal((2, 3, 6, 5))
    w = rng.normal((4, 3, 3, 3))
    b = rng.normal((4,))
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, padding=1)
    assert np.allclose(out.data, conv2d_oracle(x, w, b, 1, 1),
                       rtol=1e-12, atol=1e-12)


def test_conv2d_kernel_too_large(rng):
    with pytest.raises(ShapeError):
        conv2d(Tensor(rng.normal((1, 1, 2, 2))),
               Tensor(rng.normal((1, 1, 5, 5))), None, stride=1, padding=0)


# ------------------------------------------------------- depthwise conv

def test_depthwise_single_channel_equals_conv2d(rng):
    x = rng.normal((1, 1, 5, 5))
    w = rng.normal((1, 1, 3, 3))
    b = rng.normal((1,))
    normal = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, padding=1)
    depth = depthwise_conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, padding=1)
    # the two ops may run on different kernel implementations, so bitwise
    # equality is not guaranteed, only agreement to rounding
    assert np.abs(normal.data - depth.data).max() < 1e-12


def test_depthwise_identity_kernels(rng):
    x = rng.normal((2, 3, 4, 4))
    w = np.zeros((3, 1, 3, 3))
    w[:, 0, 1, 1] = 1.0
    out = depthwise_conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(3)),
                           stride=1, padding=1)
    assert np.allclose(out.data, x, rtol=0, atol=0)


def test_depthwise_vs_per_channel_oracle(rng):
    x = rng.normal((2, 4, 5, 6))
    w = rng.normal((4, 1, 3, 3))
    b = rng.normal((4,))
    out = depthwise_conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, padding=1)
    assert np.allclose(out.data, dwconv2d_oracle(x, w, b, 1, 1),
                       rtol=1e-12, atol=1e-12)


# ------------------------------------------------------------- maxpool

def test_maxpool_single_window():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    out = maxpool2d(Tensor(x))
    assert out.data.reshape(()) == 4.0


def test_maxpool_constant():
    out = maxpool2d(Tensor(np.full((1, 2, 4, 4), 2.5)))
    assert out.shape == (1, 2, 2, 2)
    assert (out.data == 2.5).all()


def test_maxpool_random_vs_oracle(rng):
    x = rng.normal((3, 2, 4, 4))
    out = maxpool2d(Tensor(x))
    assert np.array_equal(out.data, maxpool2x2_oracle(x))


def test_maxpool_rejects_odd_extents(rng):
    with pytest.raises(ShapeError):
        maxpool2d(Tensor(rng.normal((1, 1, 3, 4))))


def test_maxpool_rejects_other_windows(rng):
    with pytest.raises(UsageError):
        maxpool2d(Tensor(rng.normal((1, 1, 4, 4))), k=3, stride=3)


def test_maxpool_gradient_one_hot_per_window(rng):
    x = rng.normal((1, 1, 4, 4))
    tape = Tape("train")
    xt = tape.input(x)
    out = maxpool2d(xt)
    loss = sum_reduce(mul(out, Tensor(rng.uniform((1, 1, 2, 2)) + 1.0)))
    g = backward(tape, loss)[xt.node_id].data
    # each window passes exactly its incoming gradient through one element
    for i in range(2):
        for j in range(2):
            win = g[0, 0, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
            assert int((win != 0).sum()) == 1


def test_maxpool_tie_first_in_row_major():
    x = np.zeros((1, 1, 2, 2))  # all equal: 4-way tie
    tape = Tape("train")
    xt = tape.input(x)
    loss = sum_reduce(maxpool2d(xt))
    g = backward(tape, loss)[xt.node_id].data
    expected = np.zeros((1, 1, 2, 2))
    expected[0, 0, 0, 0] = 1.0
    assert np.array_equal(g, expected)


# ------------------------------------------------------------ upsample

def test_upsample_replication():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    out = nearest_upsample2x(Tensor(x))
    expected = np.array([[1, 1, 2, 2], [1, 1, 2, 2],
                         [3, 3, 4, 4], [3, 3, 4, 4]], dtype=np.float64)
    assert np.array_equal(out.data.reshape(4, 4), expected)


def test_upsample_then_pool_constant_identity():
    x = np.full((1, 1, 2, 2), 3.25)
    back = maxpool2d(nearest_upsample2x(Tensor(x)))
    assert np.array_equal(back.data, x)


def test_upsample_mass(rng):
    x = rng.normal((2, 3, 4, 4))
    out = nearest_upsample2x(Tensor(x))
    assert np.isclose(out.data.sum(), 4.0 * x.sum())
    assert np.allclose(out.data, upsample2x_oracle(x))


# ----------------------------------------------------- global avg pool

def test_gap_constant():
    out = global_avg_pool(Tensor(np.full((1, 2, 3, 3), 1.5)))
    assert out.shape == (1, 2, 1, 1)
    assert (out.data == 1.5).all()


def test_gap_known_mean():
    x = np.array([[1.0, 3.0], [5.0, 7.0]]).reshape(1, 1, 2, 2)
    out = global_avg_pool(Tensor(x))
    assert out.data.reshape(()) == 4.0


def test_gap_random_vs_oracle(rng):
    x = rng.normal((2, 3, 5, 4))
    out = global_avg_pool(Tensor(x))
    assert np.allclose(out.data, gap_oracle(x), rtol=1e-14, atol=1e-14)


# ------------------------------------------------------------ batchnorm

def test_batchnorm_normalizes_batch():
    rng = SplitMix64(4)
    x = rng.normal((4, 3, 8, 8)) * 3.0 + 1.0
    st = BatchNormState(3)
    out = batchnorm2d(Tensor(x), st, "train")
    mean = out.data.mean(axis=(0, 2, 3))
    var = out.data.var(axis=(0, 2, 3))
    assert np.abs(mean).max() < 1e-9
    assert np.abs(var - 1.0).max() < 1e-9


def test_batchnorm_zero_input_zero_output():
    st = BatchNormState(2)
    out = batchnorm2d(Tensor(np.zeros((2, 2, 4, 4))), st, "train")
    assert not out.data.any()


def test_batchnorm_running_stats_update():
    rng = SplitMix64(6)
    x = rng.normal((8, 2, 4, 4)) * 2.0 + 5.0
    st = BatchNormState(2, momentum=0.1)
    batchnorm2d(Tensor(x), st, "train")
    bm = x.mean(axis=(0, 2, 3))
    bv = x.var(axis=(0, 2, 3))
    assert np.allclose(st.running_mean, 0.9 * 0.0 + 0.1 * bm)
    assert np.allclose(st.running_var, 0.9 * 1.0 + 0.1 * bv)


def test_batchnorm_eval_uses_running_stats():
    rng = SplitMix64(8)
    st = BatchNormState(2)
    st.running_mean[:] = [1.0, -1.0]
    st.running_var[:] = [4.0, 0.25]
    x = rng.normal((2, 2, 3, 3))
    out = batchnorm2d(Tensor(x), st, "eval")
    expected = (x - st.running_mean[:, None, None]) / np.sqrt(
        st.running_var[:, None, None] + st.eps)
    assert np.allclose(out.data, expected)


def test_batchnorm_gamma_beta_applied():
    rng = SplitMix64(10)
    x = rng.normal((4, 2, 4, 4))
    st = BatchNormState(2)
    st.gamma.data[:] = [2.0, 3.0]
    st.beta.data[:] = [-1.0, 0.5]
    out = batchnorm2d(Tensor(x), st, "train")
    mean = out.data.mean(axis=(0, 2, 3))
    std = out.data.std(axis=(0, 2, 3))
    assert np.allclose(mean, [-1.0, 0.5], atol=1e-9)
    assert np.allclose(std, [2.0, 3.0], atol=1e-6)


# ------------------------------------------------------- masked softmax

def test_masked_softmax_symmetric():
    out = masked_softmax(Tensor(np.array([1.0, 1.0])), np.array([1.0, 1.0]))
    assert np.allclose(out.data, [0.5, 0.5], atol=0)


def test_masked_softmax_single_allowed():
    out = masked_softmax(Tensor(np.array([5.0, 2.0])), np.array([1.0, 0.0]))
    assert np.array_equal(out.data, [1.0, 0.0])


def test_masked_softmax_distribution_contract(rng):
    x = rng.normal((20, 9))
    mask = rng.uniform((20, 9)) > 0.4
    mask[:, 0] = True  # at least one allowed per row
    out = masked_softmax(Tensor(x), mask)
    sums = out.data.sum(axis=-1)
    assert np.abs(sums - 1.0).max() < 1e-12
    assert not out.data[~mask].any()
    assert (out.data[mask] > 0).all()


def test_masked_softmax_huge_logits_stable():
    x = np.array([[1e4, -1e4, 0.0]])
    out = masked_softmax(Tensor(x), np.array([[1.0, 1.0, 1.0]]))
    assert np.isfinite(out.data).all()
    assert np.isclose(out.data.sum(), 1.0)


def test_masked_softmax_fully_masked_row_rejected():
    with pytest.raises(UsageError):
        masked_softmax(Tensor(np.array([[1.0, 2.0]])), np.array([[0.0, 0.0]]))


# -------------------------------------------------------------- dropout

def test_dropout_rate_zero_identity(rng):
    x = rng.normal((4, 5))
    r = SplitMix64(0)
    assert np.array_equal(dropout(Tensor(x), 0.0, r, "train").data, x)
    assert np.array_equal(dropout(Tensor(x), 0.0, r, "eval").data, x)


def test_dropout_eval_identity(rng):
    x = rng.normal((4, 5))
    out = dropout(Tensor(x), 0.7, SplitMix64(1), "eval")
    assert np.array_equal(out.data, x)


def test_dropout_monte_carlo_rate():
    x = np.ones((100000,))
    out = dropout(Tensor(x), 0.5, SplitMix64(123), "train")
    dropped = float((out.data == 0).mean())
    assert abs(dropped - 0.5) < 0.01
    kept = out.data[out.data != 0]
    assert np.allclose(kept, 2.0)  # inverted scaling 1/(1-rate)


def test_dropout_bad_rate(rng):
    with pytest.raises(UsageError):
        dropout(Tensor(rng.normal((3,))), 1.0, SplitMix64(0), "train")


def test_dropout_requires_rng_in_train(rng):
    with pytest.raises(UsageError):
        dropout(Tensor(rng.normal((3,))), 0.5, None, "train")


# ---------------------------------------------------- scalar activations

def test_activation_anchor_values():
    assert sigmoid(Tensor(np.array(0.0))).data.reshape(()) == 0.5
    assert tanh(Tensor(np.array(0.0))).data.reshape(()) == 0.0
    assert relu(Tensor(np.array(-1.0))).data.reshape(()) == 0.0


def test_softmax_matches_log_softmax(rng):
    x = rng.normal((6, 7))
    s = softmax(Tensor(x))
    ls = log_softmax(Tensor(x))
    assert np.allclose(s.data, np.exp(ls.data), rtol=1e-15, atol=0)
    assert np.allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)


# ----------------------------------------------------------- backward

def test_backward_sum_gives_ones(rng):
    x = rng.normal((3, 4))
    tape = Tape("train")
    xt = tape.input(x)
    g = backward(tape, sum_reduce(xt))[xt.node_id]
    assert np.array_equal(g.data, np.ones((3, 4)))


def test_backward_quadratic_gives_2x(rng):
    x = rng.normal((5,))
    tape = Tape("train")
    xt = tape.input(x)
    g = backward(tape, sum_reduce(mul(xt, xt)))[xt.node_id]
    assert np.allclose(g.data, 2.0 * x, rtol=1e-15, atol=0)


def test_backward_rejects_nonscalar(rng):
    tape = Tape("train")
    xt = tape.input(rng.normal((3,)))
    y = mul(xt, xt)
    with pytest.raises(UsageError):
        backward(tape, y)


def test_backward_rejects_foreign_loss(rng):
    tape = Tape("train")
    tape.input(rng.normal((3,)))
    with pytest.raises(UsageError):
        backward(tape, Tensor(np.array(1.0)))


def test_backward_accumulates_shared_use(rng):
    x = rng.normal((4,))
    tape = Tape("train")
    xt = tape.input(x)
    # y = x + x: dy/dx = 2
    g = backward(tape, sum_reduce(add(xt, xt)))[xt.node_id]
    assert np.array_equal(g.data, np.full(4, 2.0))


def test_backward_through_constants(rng):
    x = rng.normal((3,))
    c = Tensor(np.array([1.0, 2.0, 3.0]))  # constant: not on tape
    tape = Tape("train")
    xt = tape.input(x)
    loss = sum_reduce(mul(xt, c))
    g = backward(tape, loss)[xt.node_id]
    assert np.array_equal(g.data, c.data)


def test_mixed_tapes_rejected(rng):
    t1, t2 = Tape("train"), Tape("train")
    a = t1.input(rng.normal((2,)))
    b = t2.input(rng.normal((2,)))
    with pytest.raises(UsageError):
        add(a, b)


# ------------------------------------------------- structural ops

def test_reshape_transpose_roundtrip(rng):
    x = rng.normal((2, 3, 4))
    t = transpose(Tensor(x), (2, 0, 1))
    assert t.shape == (4, 2, 3)
    assert np.array_equal(t.data, x.transpose(2, 0, 1))
    r = reshape(Tensor(x), (6, 4))
    assert np.array_equal(r.data, x.reshape(6, 4))
    with pytest.raises(ShapeError):
        reshape(Tensor(x), (5, 5))


def test_select_and_stack_inverse(rng):
    x = rng.normal((3, 4, 5))
    parts = [select(Tensor(x), 1, i) for i in range(4)]
    back = stack(parts, axis=1)
    assert np.array_equal(back.data, x)


def test_broadcast_binary_ops(rng):
    a = rng.normal((3, 1, 5))
    b = rng.normal((4, 1))
    for op, ref in ((add, a + b), (sub, a - b), (mul, a * b)):
        out = op(Tensor(a), Tensor(b))
        assert np.array_equal(out.data, ref)
    with pytest.raises(ShapeError):
        add(Tensor(rng.normal((3, 4))), Tensor(rng.normal((5,))))


def test_reduce_ops_match_numpy(rng):
    x = rng.normal((3, 4, 5))
    assert np.allclose(sum_reduce(Tensor(x), axis=1).data, x.sum(axis=1))
    assert np.allclose(
        mean_reduce(Tensor(x), axis=(0, 2), keepdims=True).data,
        x.mean(axis=(0, 2), keepdims=True))
    assert np.isclose(mean_reduce(Tensor(x)).data.reshape(()), x.mean())


def test_scale_op(rng):
    x = rng.normal((4,))
    assert np.array_equal(scale(Tensor(x), -2.5).data, -2.5 * x)


def test_eval_mode_forward_bit_deterministic(rng):
    x = rng.normal((2, 3, 4, 4))
    w = rng.normal((5, 3, 3, 3))
    a = conv2d(Tensor(x), Tensor(w), None, stride=1, padding=1)
    b = conv2d(Tensor(x), Tensor(w), None, stride=1, padding=1)
    assert np.array_equal(a.data, b.data)
