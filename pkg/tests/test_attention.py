"""Attention math and encoder block structure."""

import numpy as np
import pytest

from lct import tensor as T
from lct.attention import (MultiHeadWeights, NormWeights, encoder_block,
                           encoder_stack, init_encoder_block, init_multi_head,
                           multi_head_attention, scaled_dot_product_attention)
from lct.exceptions import ConfigError
from lct.optim import Parameter
from lct.tensor import Tensor


def test_sdpa_two_token_hand_oracle():
    # d_k = 1: scores = [[1, 0], [0, 0]]; out0 = (2e + 4) / (e + 1), out1 = 3
    q = Tensor([[1.0], [0.0]])
    k = Tensor([[1.0], [0.0]])
    v = Tensor([[2.0], [4.0]])
    out = scaled_dot_product_attention(q, k, v)
    e = np.e
    np.testing.assert_allclose(out.data, [[(2 * e + 4) / (e + 1)], [3.0]], rtol=1e-15)


def test_sdpa_attention_rows_are_stochastic():
    # v = identity makes the output equal the attention weight matrix
    rng = np.random.default_rng(0)
    n = 6
    q = Tensor(rng.standard_normal((n, 4)))
    k = Tensor(rng.standard_normal((n, 4)))
    weights = scaled_dot_product_attention(q, k, Tensor(np.eye(n)))
    np.testing.assert_allclose(weights.data.sum(axis=-1), np.ones(n), atol=1e-12)
    assert (weights.data >= 0).all()


def test_sdpa_scales_by_sqrt_dk():
    # with constant keys the scaling cancels; with one-hot queries it must not
    q = Tensor(np.array([[2.0, 0.0, 0.0, 0.0]]))
    k = Tensor(np.eye(4))
    v = Tensor(np.arange(8.0).reshape(4, 2))
    out = scaled_dot_product_attention(q, k, v)
    scores = (q.data @ k.data.T) / 2.0  # sqrt(d_k) = 2
    w = np.exp(scores - scores.max())
    w /= w.sum()
    np.testing.assert_allclose(out.data, w @ v.data, rtol=1e-12)


def test_sdpa_key_value_permutation_invariance():
    rng = np.random.default_rng(1)
    q = Tensor(rng.standard_normal((3, 5)))
    kd = rng.standard_normal((7, 5))
    vd = rng.standard_normal((7, 4))
    perm = rng.permutation(7)
    a = scaled_dot_product_attention(q, Tensor(kd), Tensor(vd))
    b = scaled_dot_product_attention(q, Tensor(kd[perm]), Tensor(vd[perm]))
    np.testing.assert_allclose(a.data, b.data, atol=1e-12)


def test_sdpa_shape_validation():
    with pytest.raises(ValueError):
        scaled_dot_product_attention(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))),
                                     Tensor(np.ones((2, 4))))
    with pytest.raises(ValueError):
        scaled_dot_product_attention(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 3))),
                                     Tensor(np.ones((5, 3))))


def identity_mha(d: int) -> MultiHeadWeights:
    eye = np.eye(d)
    zeros = np.zeros(d)
    return MultiHeadWeights(
        w_q=Parameter(eye.copy(), "w_q"), b_q=Parameter(zeros.copy(), "b_q"),
        w_k=Parameter(eye.copy(), "w_k"), b_k=Parameter(zeros.copy(), "b_k"),
        w_v=Parameter(eye.copy(), "w_v"), b_v=Parameter(zeros.copy(), "b_v"),
        w_o=Parameter(eye.copy(), "w_o"), b_o=Parameter(zeros.copy(), "b_o"),
        heads=1,
    )


def test_single_head_identity_projections_reduce_to_sdpa():
    rng = np.random.default_rng(2)
    xd = rng.standard_normal((5, 4))
    x = Tensor(xd)
    got = multi_head_attention(x, identity_mha(4))
    want = scaled_dot_product_attention(x, x, x)
    np.testing.assert_allclose(got.data, want.data, rtol=1e-12)


def test_multi_head_output_shape_batched_and_flat():
    rng = np.random.default_rng(3)
    w = init_multi_head(8, heads=2, rng=rng)
    flat = multi_head_attention(Tensor(rng.standard_normal((5, 8))), w)
    assert flat.shape == (5, 8)
    batched = multi_head_attention(Tensor(rng.standard_normal((3, 5, 8))), w)
    assert batched.shape == (3, 5, 8)


def test_multi_head_batch_rows_are_independent():
    rng = np.random.default_rng(4)
    w = init_multi_head(6, heads=3, rng=rng)
    xd = rng.standard_normal((4, 5, 6))
    whole = multi_head_attention(Tensor(xd), w).data
    for i in range(4):
        one = multi_head_attention(Tensor(xd[i]), w).data
        np.testing.assert_allclose(whole[i], one, rtol=1e-12)


def test_odd_width_floors_head_dim_and_wo_restores_it():
    w = init_multi_head(7, heads=2, rng=np.random.default_rng(5))
    assert w.d_k == 3
    assert w.w_q.shape == (7, 6)
    assert w.w_o.shape == (6, 7)
    out = multi_head_attention(Tensor(np.random.default_rng(6).standard_normal((4, 7))), w)
    assert out.shape == (4, 7)


def test_init_multi_head_validation():
    rng = np.random.default_rng(7)
    with pytest.raises(ConfigError):
        init_multi_head(8, heads=0, rng=rng)
    with pytest.raises(ConfigError):
        init_multi_head(2, heads=4, rng=rng)


def test_mha_rejects_width_mismatch():
    w = init_multi_head(8, heads=2, rng=np.random.default_rng(8))
    with pytest.raises(ValueError):
        multi_head_attention(Tensor(np.ones((3, 5))), w)


def zeroed_block(d: int, d_mlp: int) -> "EncoderBlockWeights":
    blk = init_encoder_block(d, heads=2, d_mlp=d_mlp, dropout_rate=0.0,
                             rng=np.random.default_rng(9))
    blk.mha.w_o.tensor.data[...] = 0.0
    blk.mlp_w2.tensor.data[...] = 0.0
    return blk


def test_encoder_block_with_zeroed_branches_is_identity():
    # both sublayers end in a zeroed projection, so only residuals remain
    xd = np.random.default_rng(10).standard_normal((3, 5, 8))
    out = encoder_block(Tensor(xd), zeroed_block(8, 16))
    np.testing.assert_allclose(out.data, xd, atol=1e-12)


def test_encoder_block_gradients_reach_all_parameters():
    blk = init_encoder_block(6, heads=2, d_mlp=12, dropout_rate=0.0,
                             rng=np.random.default_rng(11))
    x = Tensor(np.random.default_rng(12).standard_normal((2, 4, 6)))
    T.sum_(encoder_block(x, blk)).backward()
    for p in blk.parameters():
        assert p.tensor.grad is not None, p.name
        assert p.tensor.grad.shape == p.tensor.data.shape


def test_encoder_stack_applies_final_norm():
    # no blocks: the stack is exactly one layer norm
    xd = np.random.default_rng(13).standard_normal((2, 3, 4))
    final = NormWeights(gamma=Parameter(np.full(4, 2.0), "g"),
                        beta=Parameter(np.full(4, -1.0), "b"))
    out = encoder_stack(Tensor(xd), [], final)
    mu = xd.mean(axis=-1, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=-1, keepdims=True)
    want = 2.0 * (xd - mu) / np.sqrt(var + 1e-5) - 1.0
    np.testing.assert_allclose(out.data, want, rtol=1e-10)


def test_dropout_in_block_is_deterministic_given_rng():
    blk = init_encoder_block(6, heads=2, d_mlp=12, dropout_rate=0.4,
                             rng=np.random.default_rng(14))
    xd = np.random.default_rng(15).standard_normal((2, 4, 6))
    a = encoder_block(Tensor(xd), blk, training=True, rng=np.random.default_rng(99))
    b = encoder_block(Tensor(xd), blk, training=True, rng=np.random.default_rng(99))
    np.testing.assert_array_equal(a.data, b.data)


def test_eval_mode_ignores_dropout():
    blk = init_encoder_block(6, heads=2, d_mlp=12, dropout_rate=0.9,
                             rng=np.random.default_rng(16))
    xd = np.random.default_rng(17).standard_normal((2, 4, 6))
    a = encoder_block(Tensor(xd), blk, training=False)
    b = encoder_block(Tensor(xd), blk, training=False)
    np.testing.assert_array_equal(a.data, b.data)
