"""Tensor core: forward oracles, gradient routing, dtype and source tracking.

Every expected value here is either computed by hand or by an independent
numpy formula written directly in the test, never by the code under test.
"""

import numpy as np
import pytest

from lct import tensor as T
from lct.exceptions import ConfigError, NumericError
from lct.tensor import Tensor, no_grad


def scalar_loss(t, weights=None):
    """sum(t * weights) so backward() sees d(out)/dt == weights."""
    if weights is None:
        return T.sum_(t)
    return T.sum_(T.mul(t, Tensor(weights)))


# --- construction and bookkeeping ------------------------------------------------


def test_python_lists_become_float64():
    t = Tensor([[1, 2], [3, 4]])
    assert t.dtype == np.float64
    assert t.shape == (2, 2)


def test_float32_arrays_stay_float32_through_ops():
    a = Tensor(np.ones((2, 3), np.float32), requires_grad=True)
    b = Tensor(np.ones((3, 4), np.float32))
    out = T.relu(T.matmul(a, b))
    assert out.dtype == np.float32
    T.sum_(out).backward()
    assert a.grad.dtype == np.float32


def test_scalar_coercion_matches_tensor_dtype():
    a = Tensor(np.ones(3, np.float32))
    assert (a * 2.0).dtype == np.float32
    assert (1.0 + a).dtype == np.float32


def test_backward_needs_scalar():
    t = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        t.backward()


def test_deep_graph_does_not_hit_recursion_limit():
    x = Tensor(np.ones(4), requires_grad=True)
    y = x
    for _ in range(3000):
        y = T.add(y, 1.0)
    T.sum_(y).backward()
    np.testing.assert_array_equal(x.grad, np.ones(4))


# --- elementwise arithmetic ------------------------------------------------------


def test_add_mul_sub_neg_forward_values():
    a = Tensor([1.0, -2.0, 3.0])
    b = Tensor([4.0, 5.0, -6.0])
    np.testing.assert_array_equal(T.add(a, b).data, [5.0, 3.0, -3.0])
    np.testing.assert_array_equal(T.sub(a, b).data, [-3.0, -7.0, 9.0])
    np.testing.assert_array_equal(T.mul(a, b).data, [4.0, -10.0, -18.0])
    np.testing.assert_array_equal(T.neg(a).data, [-1.0, 2.0, -3.0])


def test_mul_gradient_is_other_operand():
    a = Tensor([2.0, 3.0], requires_grad=True)
    b = Tensor([5.0, 7.0], requires_grad=True)
    scalar_loss(T.mul(a, b)).backward()
    np.testing.assert_array_equal(a.grad, [5.0, 7.0])
    np.testing.assert_array_equal(b.grad, [2.0, 3.0])


def test_reused_tensor_accumulates_gradient():
    x = Tensor([3.0], requires_grad=True)
    scalar_loss(T.add(x, x)).backward()
    np.testing.assert_array_equal(x.grad, [2.0])


def test_broadcast_add_sums_gradient_over_broadcast_axes():
    a = Tensor(np.zeros((2, 3)), requires_grad=True)
    b = Tensor(np.zeros(3), requires_grad=True)
    g = np.arange(6.0).reshape(2, 3)
    scalar_loss(T.add(a, b), g).backward()
    np.testing.assert_array_equal(a.grad, g)
    np.testing.assert_array_equal(b.grad, g.sum(axis=0))


def test_broadcast_to_gradient_collapses_new_axes():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = T.broadcast_to(x, (3, 2))
    assert y.shape == (3, 2)
    scalar_loss(y).backward()
    np.testing.assert_array_equal(x.grad, [3.0, 3.0])


# --- matmul ----------------------------------------------------------------------


def test_matmul_forward_hand_case():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[1.0], [1.0]])
    np.testing.assert_array_equal(T.matmul(a, b).data, [[3.0], [7.0]])


def test_matmul_gradients_follow_transpose_rule():
    ad = np.array([[1.0, 2.0], [3.0, 4.0]])
    bd = np.array([[5.0, 6.0], [7.0, 8.0]])
    g = np.array([[1.0, 0.0], [0.0, 2.0]])
    a = Tensor(ad, requires_grad=True)
    b = Tensor(bd, requires_grad=True)
    scalar_loss(T.matmul(a, b), g).backward()
    np.testing.assert_array_equal(a.grad, g @ bd.T)
    np.testing.assert_array_equal(b.grad, ad.T @ g)


def test_matmul_batched_gradients_match_per_slice():
    rng = np.random.default_rng(3)
    ad = rng.standard_normal((4, 2, 3))
    bd = rng.standard_normal((4, 3, 5))
    g = rng.standard_normal((4, 2, 5))
    a = Tensor(ad, requires_grad=True)
    b = Tensor(bd, requires_grad=True)
    scalar_loss(T.matmul(a, b), g).backward()
    np.testing.assert_allclose(a.grad, g @ bd.transpose(0, 2, 1), rtol=1e-12)
    np.testing.assert_allclose(b.grad, ad.transpose(0, 2, 1) @ g, rtol=1e-12)


def test_matmul_inner_dim_mismatch_raises():
    with pytest.raises(ValueError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


# --- shape ops -------------------------------------------------------------------


def test_reshape_routes_gradient_back():
    x = Tensor(np.arange(6.0), requires_grad=True)
    g = np.arange(6.0).reshape(2, 3) + 1
    scalar_loss(T.reshape(x, (2, 3)), g).backward()
    np.testing.assert_array_equal(x.grad, g.ravel())


def test_transpose_gradient_uses_inverse_permutation():
    x = Tensor(np.zeros((2, 3, 4)), requires_grad=True)
    y = T.transpose(x, (2, 0, 1))
    assert y.shape == (4, 2, 3)
    g = np.arange(24.0).reshape(4, 2, 3)
    scalar_loss(y, g).backward()
    np.testing.assert_array_equal(x.grad, g.transpose(1, 2, 0))


def test_getitem_scatters_gradient_into_source():
    x = Tensor(np.arange(10.0), requires_grad=True)
    y = x[2:5]
    np.testing.assert_array_equal(y.data, [2.0, 3.0, 4.0])
    scalar_loss(y, np.array([1.0, 2.0, 3.0])).backward()
    want = np.zeros(10)
    want[2:5] = [1.0, 2.0, 3.0]
    np.testing.assert_array_equal(x.grad, want)


def test_concat_splits_gradient_at_boundaries():
    a = Tensor(np.zeros((2, 2)), requires_grad=True)
    b = Tensor(np.zeros((3, 2)), requires_grad=True)
    y = T.concat([a, b], axis=0)
    assert y.shape == (5, 2)
    g = np.arange(10.0).reshape(5, 2)
    scalar_loss(y, g).backward()
    np.testing.assert_array_equal(a.grad, g[:2])
    np.testing.assert_array_equal(b.grad, g[2:])


# --- reductions ------------------------------------------------------------------


def test_sum_axis_and_keepdims_values():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(T.sum_(x).data, 15.0)
    np.testing.assert_array_equal(T.sum_(x, axis=0).data, [3.0, 5.0, 7.0])
    assert T.sum_(x, axis=1, keepdims=True).shape == (2, 1)


def test_sum_gradient_broadcasts_back():
    x = Tensor(np.zeros((2, 3)), requires_grad=True)
    scalar_loss(T.sum_(x, axis=1), np.array([2.0, 5.0])).backward()
    np.testing.assert_array_equal(x.grad, [[2.0, 2.0, 2.0], [5.0, 5.0, 5.0]])


def test_mean_gradient_divides_by_count():
    x = Tensor(np.zeros(4), requires_grad=True)
    T.mean_(x).backward()
    np.testing.assert_array_equal(x.grad, [0.25, 0.25, 0.25, 0.25])


# --- activations and normalization -----------------------------------------------


def test_relu_clips_and_masks_gradient():
    x = Tensor([-2.0, 0.0, 3.0], requires_grad=True)
    y = T.relu(x)
    np.testing.assert_array_equal(y.data, [0.0, 0.0, 3.0])
    scalar_loss(y, np.array([10.0, 10.0, 10.0])).backward()
    # subgradient at exactly zero is zero
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 10.0])


def test_softmax_two_point_oracle():
    # softmax([0, ln 3]) = [1, 3] / 4 exactly
    y = T.softmax(Tensor([0.0, np.log(3.0)]))
    np.testing.assert_allclose(y.data, [0.25, 0.75], atol=1e-15)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    y = T.softmax(Tensor(rng.standard_normal((50, 7)) * 5), axis=-1)
    np.testing.assert_allclose(y.data.sum(axis=-1), np.ones(50), atol=1e-12)


def test_softmax_gradient_hand_case():
    # s = [0.25, 0.75]; with g = [1, 0]: dx = s * (g - s.g) = [s1(1-s1), -s1 s2]
    x = Tensor([0.0, np.log(3.0)], requires_grad=True)
    scalar_loss(T.softmax(x), np.array([1.0, 0.0])).backward()
    np.testing.assert_allclose(x.grad, [0.1875, -0.1875], atol=1e-15)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(1)
    xd = rng.standard_normal((4, 5))
    a = T.softmax(Tensor(xd)).data
    b = T.softmax(Tensor(xd + 1000.0)).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_softmax_rejects_nan_and_bad_axis():
    with pytest.raises(NumericError):
        T.softmax(Tensor([np.nan, 0.0]))
    with pytest.raises(ValueError):
        T.softmax(Tensor([1.0, 2.0]), axis=3)


def test_layer_norm_matches_independent_formula():
    xd = np.array([[1.0, 2.0, 3.0], [4.0, 4.0, 4.0]])
    gamma = Tensor(np.array([2.0, 2.0, 2.0]), requires_grad=True)
    beta = Tensor(np.array([1.0, 1.0, 1.0]), requires_grad=True)
    y = T.layer_norm(Tensor(xd), gamma, beta)
    mu = xd.mean(axis=-1, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=-1, keepdims=True)
    want = 2.0 * (xd - mu) / np.sqrt(var + 1e-5) + 1.0
    np.testing.assert_allclose(y.data, want, rtol=1e-12)


def test_layer_norm_gradient_sums_to_zero_per_row():
    # gamma=1, beta=0: rows of dx are orthogonal to constants
    rng = np.random.default_rng(2)
    x = Tensor(rng.standard_normal((3, 8)), requires_grad=True)
    ones = Tensor(np.ones(8))
    zeros = Tensor(np.zeros(8))
    g = rng.standard_normal((3, 8))
    scalar_loss(T.layer_norm(x, ones, zeros), g).backward()
    np.testing.assert_allclose(x.grad.sum(axis=-1), np.zeros(3), atol=1e-10)


# --- dropout ---------------------------------------------------------------------


def test_dropout_off_is_identity_object():
    x = Tensor(np.ones(5))
    assert T.dropout(x, 0.0, training=True) is x
    assert T.dropout(x, 0.5, training=False) is x


def test_dropout_scales_survivors_exactly():
    x = Tensor(np.ones(10000))
    y = T.dropout(x, 0.25, training=True, rng=np.random.default_rng(0))
    kept = y.data != 0.0
    np.testing.assert_allclose(y.data[kept], 1.0 / 0.75)
    assert 0.70 < kept.mean() < 0.80


def test_dropout_seed_reproduces_mask():
    x = Tensor(np.ones(100))
    a = T.dropout(x, 0.5, training=True, rng=np.random.default_rng(7))
    b = T.dropout(x, 0.5, training=True, rng=np.random.default_rng(7))
    np.testing.assert_array_equal(a.data, b.data)


def test_dropout_gradient_reuses_forward_mask():
    x = Tensor(np.ones(1000), requires_grad=True)
    y = T.dropout(x, 0.5, training=True, rng=np.random.default_rng(3))
    scalar_loss(y).backward()
    np.testing.assert_array_equal(x.grad, y.data)


def test_dropout_rejects_bad_rate():
    x = Tensor(np.ones(3))
    with pytest.raises(ConfigError):
        T.dropout(x, 1.0, training=True)
    with pytest.raises(ConfigError):
        T.dropout(x, -0.1, training=True)


# --- dense and scaling -----------------------------------------------------------


def test_dense_is_affine_map():
    x = Tensor([[1.0, 2.0]])
    w = Tensor([[1.0, 0.0, 2.0], [0.0, 1.0, 3.0]])
    b = Tensor([10.0, 20.0, 30.0])
    np.testing.assert_array_equal(T.dense(x, w, b).data, [[11.0, 22.0, 38.0]])


def test_sqrt_scale_divides_by_root_d():
    x = Tensor([8.0], requires_grad=True)
    y = T.sqrt_scale(x, 16)
    np.testing.assert_array_equal(y.data, [2.0])
    y.backward()
    np.testing.assert_array_equal(x.grad, [0.25])


# --- convolution -----------------------------------------------------------------


def test_conv2d_ones_kernel_counts_window():
    x = Tensor(np.ones((5, 5, 1)))
    f = Tensor(np.ones((3, 3, 1, 1)))
    y = T.conv2d_valid(x, f)
    assert y.shape == (3, 3, 1)
    np.testing.assert_array_equal(y.data, np.full((3, 3, 1), 9.0))


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(4)
    xd = rng.standard_normal((2, 6, 7, 3))
    fd = rng.standard_normal((3, 3, 3, 4))
    y = T.conv2d_valid(Tensor(xd), Tensor(fd))
    want = np.zeros((2, 4, 5, 4))
    for i in range(4):
        for j in range(5):
            patch = xd[:, i:i + 3, j:j + 3, :]
            want[:, i, j, :] = np.einsum("bhwc,hwco->bo", patch, fd)
    np.testing.assert_allclose(y.data, want, rtol=1e-12)


def test_conv2d_filter_gradient_sums_patches():
    xd = np.arange(16.0).reshape(4, 4, 1)
    f = Tensor(np.zeros((3, 3, 1, 1)), requires_grad=True)
    scalar_loss(T.conv2d_valid(Tensor(xd), f)).backward()
    # unit upstream grad: each filter tap sees the sum of its shifted window
    want = np.array([[xd[dh:dh + 2, dw:dw + 2].sum() for dw in range(3)]
                     for dh in range(3)]).reshape(3, 3, 1, 1)
    np.testing.assert_array_equal(f.grad, want)


def test_conv2d_input_gradient_matches_full_correlation():
    rng = np.random.default_rng(5)
    xd = rng.standard_normal((5, 6, 2))
    fd = rng.standard_normal((3, 3, 2, 3))
    g = rng.standard_normal((3, 4, 3))
    x = Tensor(xd, requires_grad=True)
    scalar_loss(T.conv2d_valid(x, Tensor(fd)), g).backward()
    want = np.zeros_like(xd)
    for i in range(3):
        for j in range(4):
            want[i:i + 3, j:j + 3, :] += np.einsum("o,hwco->hwc", g[i, j], fd)
    np.testing.assert_allclose(x.grad, want, rtol=1e-12)


def test_conv2d_shape_law_over_grid():
    for h in (3, 4, 9, 17):
        for w in (3, 5, 20):
            y = T.conv2d_valid(Tensor(np.zeros((h, w, 2))), Tensor(np.zeros((3, 3, 2, 4))))
            assert y.shape == (h - 2, w - 2, 4)


def test_conv2d_input_validation():
    with pytest.raises(ValueError):
        T.conv2d_valid(Tensor(np.zeros((5, 5, 2))), Tensor(np.zeros((3, 3, 3, 4))))
    with pytest.raises(ValueError):
        T.conv2d_valid(Tensor(np.zeros((2, 5, 1))), Tensor(np.zeros((3, 3, 1, 1))))
    with pytest.raises(ValueError):
        T.conv2d_valid(Tensor(np.zeros((5, 5, 1))), Tensor(np.zeros((3, 3, 1))))


# --- max pooling -----------------------------------------------------------------


def oracle_maxpool(xd, g, kh=3, kw=3, sh=2, sw=2):
    """Brute-force same-padded pool: first strictly-greater win per window."""
    h, w, c = xd.shape
    oh, ow = -(-h // sh), -(-w // sw)
    pad_h = max((oh - 1) * sh + kh - h, 0)
    pad_w = max((ow - 1) * sw + kw - w, 0)
    top, left = pad_h // 2, pad_w // 2
    out = np.empty((oh, ow, c), xd.dtype)
    gx = np.zeros_like(xd)
    for i in range(oh):
        for j in range(ow):
            for ch in range(c):
                best, where = -np.inf, None
                for dh in range(kh):
                    for dw in range(kw):
                        r, q = i * sh + dh - top, j * sw + dw - left
                        v = xd[r, q, ch] if 0 <= r < h and 0 <= q < w else -np.inf
                        if v > best:
                            best, where = v, (r, q)
                out[i, j, ch] = best
                if where is not None:
                    gx[where[0], where[1], ch] += g[i, j, ch]
    return out, gx


def test_maxpool_output_extent_is_ceil():
    for h in (1, 2, 3, 8, 13, 63, 126):
        y = T.maxpool_same(Tensor(np.zeros((h, h, 1))))
        assert y.shape == (-(-h // 2), -(-h // 2), 1)


def test_maxpool_tie_goes_to_first_in_row_major_order():
    # window sees two 5s; the earlier one in (row, col) scan takes the gradient
    xd = np.array([[0.0, 5.0, 0.0], [5.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).reshape(3, 3, 1)
    x = Tensor(xd, requires_grad=True)
    y = T.maxpool_same(x)
    g = np.zeros(y.shape)
    g[0, 0, 0] = 1.0
    scalar_loss(y, g).backward()
    assert x.grad[0, 1, 0] == 1.0
    assert x.grad[1, 0, 0] == 0.0


def test_maxpool_matches_brute_force_with_ties():
    rng = np.random.default_rng(6)
    for _ in range(25):
        h, w, c = (int(v) for v in rng.integers(2, 13, size=3))
        xd = np.round(rng.standard_normal((h, w, c)) * 2) / 2  # force exact ties
        x = Tensor(xd, requires_grad=True)
        y = T.maxpool_same(x)
        g = rng.standard_normal(y.shape)
        want_out, want_gx = oracle_maxpool(xd, g)
        np.testing.assert_array_equal(y.data, want_out)
        scalar_loss(y, g).backward()
        np.testing.assert_allclose(x.grad, want_gx, rtol=1e-12, atol=1e-15)


def test_maxpool_all_negative_input_keeps_values():
    xd = np.full((4, 4, 1), -3.0)
    y = T.maxpool_same(Tensor(xd))
    np.testing.assert_array_equal(y.data, np.full((2, 2, 1), -3.0))


def test_maxpool_batched_matches_single():
    rng = np.random.default_rng(8)
    xd = rng.standard_normal((3, 7, 9, 2))
    got = T.maxpool_same(Tensor(xd)).data
    for b in range(3):
        single = T.maxpool_same(Tensor(xd[b])).data
        np.testing.assert_array_equal(got[b], single)


# --- cross entropy ---------------------------------------------------------------


def test_cross_entropy_uniform_logits_give_log2():
    loss = T.cross_entropy_loss(Tensor([[0.0, 0.0]]), np.array([0]))
    np.testing.assert_allclose(loss.data, np.log(2.0), rtol=1e-15)


def test_cross_entropy_confident_correct_is_small():
    loss = T.cross_entropy_loss(Tensor([[20.0, -20.0]]), np.array([0]))
    assert float(loss.data) < 1e-8


def test_cross_entropy_gradient_is_probs_minus_onehot_over_batch():
    logits = Tensor([[0.0, 0.0], [2.0, 0.0]], requires_grad=True)
    y = np.array([1, 0])
    T.cross_entropy_loss(logits, y).backward()
    p0 = np.array([0.5, 0.5])
    e2 = np.exp(2.0)
    p1 = np.array([e2, 1.0]) / (e2 + 1.0)
    want = np.stack([p0 - [0.0, 1.0], p1 - [1.0, 0.0]]) / 2.0
    np.testing.assert_allclose(logits.grad, want, rtol=1e-12)


def test_cross_entropy_validates_labels_and_logits():
    with pytest.raises(ValueError):
        T.cross_entropy_loss(Tensor([[0.0, 0.0]]), np.array([2]))
    with pytest.raises(ValueError):
        T.cross_entropy_loss(Tensor([0.0, 0.0]), np.array([0]))
    with pytest.raises(NumericError):
        T.cross_entropy_loss(Tensor([[np.inf, 0.0]]), np.array([0]))


# --- autodiff modes and provenance -----------------------------------------------


def test_no_grad_blocks_graph_building():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = T.mul(x, x)
    assert y._backward is None
    assert y._parents == ()


def test_no_grad_restores_on_exit():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        pass
    y = T.mul(x, x)
    T.sum_(y).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 2.0, 2.0])


def test_sources_merge_across_ops():
    a = Tensor(np.ones(2), sources=frozenset({"a"}))
    b = Tensor(np.ones(2), sources=frozenset({"b"}))
    assert T.add(a, b).sources == {"a", "b"}


def test_sources_propagate_under_no_grad():
    a = Tensor(np.ones(2), sources=frozenset({"val"}))
    with no_grad():
        out = T.relu(T.mul(a, 2.0))
    assert out.sources == {"val"}


def test_sources_propagate_through_every_op_kind():
    a = Tensor(np.ones((4, 4, 1)), sources=frozenset({"x"}))
    checks = [
        T.maxpool_same(a),
        T.conv2d_valid(a, Tensor(np.ones((3, 3, 1, 1)))),
        T.softmax(T.reshape(a, (4, 4))),
        T.layer_norm(T.reshape(a, (4, 4)), Tensor(np.ones(4)), Tensor(np.zeros(4))),
        T.concat([a, a], axis=0),
        T.sum_(a),
    ]
    for out in checks:
        assert "x" in out.sources
