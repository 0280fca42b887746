import logging

import numpy as np
import pytest

from richunet import ops
from richunet.attention import (KAttentionParams, k_attention_forward,
                                project_qkv, topk_mask, topk_select)
from richunet.autodiff import Tape, Tensor, backward
from richunet.errors import ConfigError, ShapeError
from richunet.rng import SplitMix64, derive_seed

from oracles import dense_mha_oracle


def _params(channels=4, heads=2, topk=2, drop=0.0, seed=5, scale=None,
            name="t"):
    return KAttentionParams(channels=channels, num_heads=heads, topk=topk,
                            drop_rate=drop, scale=scale,
                            rng=SplitMix64(seed), name=name)


# --------------------------------------------------------- projections

def test_project_identity_single_head(rng):
    p = _params(channels=3, heads=1, topk=1)
    for w in (p.w_q, p.w_k, p.w_v):
        w.data[:] = np.eye(3)
    x = rng.normal((2, 4, 3))
    q, k, v = project_qkv(Tensor(x), p)
    assert q.shape == (2, 1, 4, 3)
    for t in (q, k, v):
        assert np.allclose(t.data[:, 0], x, atol=0)


def test_project_zero_weights(rng):
    p = _params()
    for w in (p.w_q, p.w_k, p.w_v):
        w.data[:] = 0.0
    q, k, v = project_qkv(Tensor(rng.normal((1, 3, 4))), p)
    assert not q.data.any() and not k.data.any() and not v.data.any()


def test_project_heads_concat_reproduces_full_matmul(rng):
    p = _params(channels=6, heads=2, topk=2)
    x = rng.normal((2, 5, 6))
    q, _, _ = project_qkv(Tensor(x), p)
    # stitching the two head slices back together equals X @ W_q
    full = x @ p.w_q.data
    merged = q.data.transpose(0, 2, 1, 3).reshape(2, 5, 6)
    assert np.allclose(merged, full, rtol=1e-15, atol=1e-15)


def test_project_rejects_wrong_channel_count(rng):
    p = _params(channels=4)
    with pytest.raises(ShapeError):
        project_qkv(Tensor(rng.normal((1, 3, 5))), p)


# ------------------------------------------------------------ top-k

def test_topk_forced_ordering():
    idx = topk_select(np.array([0.9, 0.1, 0.5]), 2)
    assert set(idx.tolist()) == {0, 2}


def test_topk_degenerate_k_keeps_all():
    s = np.array([0.3, 0.1, 0.2])
    idx = topk_select(s, 3)
    assert sorted(idx.tolist()) == [0, 1, 2]


def test_topk_random_vs_sort_oracle(rng):
    s = rng.normal((4, 3, 8, 8))
    for k in (1, 3, 8):
        idx = topk_select(s, k)
        flat = s.reshape(-1, 8)
        got = idx.reshape(-1, k)
        for row in range(flat.shape[0]):
            expect = set(np.argsort(-flat[row], kind="stable")[:k].tolist())
            assert set(got[row].tolist()) == expect


def test_topk_tie_prefers_lower_index():
    idx = topk_select(np.array([1.0, 1.0, 1.0]), 2)
    assert idx.tolist() == [0, 1]


def test_topk_clamps_and_logs_once(caplog):
    with caplog.at_level(logging.INFO, logger="richunet.attention"):
        idx = topk_select(np.array([3.0, 1.0]), 5)
    assert sorted(idx.tolist()) == [0, 1]


def test_topk_rejects_bad_k():
    with pytest.raises(ConfigError):
        topk_select(np.array([1.0, 2.0]), 0)


def test_topk_monotone_refinement(rng):
    s = rng.normal((2, 2, 6, 6))
    prev = topk_mask(s, 1)
    for k in range(2, 7):
        cur = topk_mask(s, k)
        assert (cur | prev == cur).all(), f"k={k-1} support not in k={k}"
        prev = cur


# -------------------------------------------------- sparsity contracts

def _attention_rows(x, p):
    """Rebuild the softmax matrix the forward pass uses."""
    tape = Tape("eval")
    q, k, v = project_qkv(tape.input(x), p)
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), p.scale)
    mask = topk_mask(scores, p.topk)
    return ops.masked_softmax(scores, mask, axis=-1).data


def test_sparsity_row_contract(rng):
    for i in range(10):
        n = 3 + int(rng.uniform(None) * 10)
        k = 1 + int(rng.uniform(None) * n)
        p = _params(channels=4, heads=2, topk=k, seed=100 + i)
        rows = _attention_rows(rng.normal((2, n, 4)), p)
        nnz = (rows != 0).sum(axis=-1)
        assert (nnz <= min(k, n)).all()
        assert np.abs(rows.sum(axis=-1) - 1.0).max() < 1e-12


def test_dense_equivalence_at_full_k(rng):
    for i in range(5):
        n = 4 + i
        p = _params(channels=6, heads=3, topk=n, seed=50 + i)
        x = rng.normal((2, n, 6))
        out = k_attention_forward(Tape("eval").input(x), p, "eval")
        ref = dense_mha_oracle(x, p.w_q.data, p.w_k.data, p.w_v.data,
                               p.w_o.data, heads=3, scale=p.scale)
        assert np.abs(out.data - ref).max() < 1e-12


def test_zero_output_projection_residual_exact(rng):
    p = _params()
    p.w_o.data[:] = 0.0
    x = rng.normal((2, 5, 4))
    out = k_attention_forward(Tape("eval").input(x), p, "eval")
    assert np.array_equal(out.data, x)


def test_three_token_hand_oracle():
    # H=1, k=1: each query copies the value of its single best key
    p = _params(channels=2, heads=1, topk=1, scale=1.0)
    for w in (p.w_q, p.w_k, p.w_v):
        w.data[:] = np.eye(2)
    p.w_o.data[:] = np.eye(2)
    x = np.array([[[2.0, 0.0], [0.0, 1.0], [1.0, 1.0]]])
    scores = x[0] @ x[0].T  # q=k=x
    out = k_attention_forward(Tape("eval").input(x), p, "eval")
    for i in range(3):
        j = int(np.argmax(scores[i]))
        assert np.allclose(out.data[0, i], x[0, j] + x[0, i], atol=1e-15)


def test_permutation_equivariance(rng):
    p = _params(channels=4, heads=2, topk=3, seed=77)
    x = rng.normal((1, 6, 4))
    perm = SplitMix64(3).permutation(6)
    out = k_attention_forward(Tape("eval").input(x), p, "eval").data
    out_p = k_attention_forward(
        Tape("eval").input(x[:, perm]), p, "eval").data
    assert np.allclose(out[:, perm], out_p, atol=1e-12)


def test_forward_shape_and_train_dropout_determinism(rng):
    p = _params(drop=0.4)
    x = rng.normal((2, 7, 4))
    a = k_attention_forward(Tape("train").input(x), p, "train",
                            SplitMix64(9)).data
    b = k_attention_forward(Tape("train").input(x), p, "train",
                            SplitMix64(9)).data
    assert a.shape == x.shape
    assert np.array_equal(a, b)


def test_gradient_reaches_all_projections(rng):
    p = _params(topk=2)
    x = rng.normal((1, 5, 4))
    tape = Tape("train")
    out = k_attention_forward(tape.input(x), p, "train")
    loss = ops.sum_reduce(ops.mul(out, out))
    grads = backward(tape, loss)
    for w in (p.w_q, p.w_k, p.w_v, p.w_o):
        g = grads[tape.param_node_id(w)].data
        assert g.shape == w.data.shape
        assert np.abs(g).max() > 0


# -------------------------------------------------------- config errors

def test_param_validation():
    with pytest.raises(ConfigError):
        _params(channels=5, heads=2)
    with pytest.raises(ConfigError):
        _params(topk=0)
    with pytest.raises(ConfigError):
        _params(drop=1.0)
    with pytest.raises(ConfigError):
        _params(scale=0.0)
