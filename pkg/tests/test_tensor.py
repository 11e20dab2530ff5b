"""Autodiff primitives: forward oracles and finite-difference gradients."""

import math

import mpmath
import numpy as np
import pytest

import nilmformer.nn as nn
from nilmformer.errors import ConfigurationError, ContractViolation
from nilmformer.nn import tensor as T

RNG = np.random.default_rng(42)


def fd_input_grad(fn, x, h=1e-5):
    """Central finite differences of a scalar-valued fn wrt input array."""
    g = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = g.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        up = fn(x)
        flat_x[i] = orig - h
        down = fn(x)
        flat_x[i] = orig
        flat_g[i] = (up - down) / (2 * h)
    return g


def analytic_input_grad(op, x):
    t = nn.Tensor(x, requires_grad=True)
    out = op(t)
    out.sum().backward()
    return t.grad


def check_op_grad(op, x, tol=1e-6):
    def scalar(arr):
        with nn.no_grad():
            return float(op(nn.Tensor(arr)).sum().data)

    numeric = fd_input_grad(scalar, x.copy())
    analytic = analytic_input_grad(op, x)
    denom = np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)), 1e-8)
    assert np.max(np.abs(numeric - analytic) / denom) <= tol


# -- arithmetic -----------------------------------------------------------


def test_add_mul_backward_accumulates():
    p = nn.Parameter(np.array([1.0, 2.0]))
    (p * 3.0 + 1.0).sum().backward()
    np.testing.assert_allclose(p.grad, [3.0, 3.0])
    (p * 2.0).sum().backward()
    np.testing.assert_allclose(p.grad, [5.0, 5.0])  # accumulates until zeroed


def test_sum_of_params_gradient_ones():
    p = nn.Parameter(RNG.normal(size=(3, 4)))
    p.sum().backward()
    np.testing.assert_array_equal(p.grad, np.ones((3, 4)))


def test_half_sum_of_squares_gradient_is_value():
    p = nn.Parameter(RNG.normal(size=7))
    ((p * p).sum() * 0.5).backward()
    np.testing.assert_allclose(p.grad, p.data, rtol=1e-12)


def test_backward_on_non_scalar_rejected():
    p = nn.Parameter(np.ones(3))
    with pytest.raises(ContractViolation):
        (p * 2.0).backward()


def test_broadcast_gradients():
    a = nn.Parameter(RNG.normal(size=(4, 1, 5)))
    b = nn.Parameter(RNG.normal(size=(3, 5)))
    (a * b).sum().backward()
    assert a.grad.shape == a.data.shape
    assert b.grad.shape == b.data.shape
    np.testing.assert_allclose(
        b.grad, np.broadcast_to(a.data, (4, 3, 5)).sum(axis=0), rtol=1e-12
    )


@pytest.mark.parametrize(
    "op",
    [
        lambda t: t * t + 2.0 * t,
        lambda t: (t + 1.0) / (t * t + 2.0),
        lambda t: (-t) ** 3.0,
        lambda t: t.mean(axis=0).sum() + t.sum(axis=1, keepdims=True).sum(),
    ],
)
def test_arithmetic_gradients_match_fd(op):
    check_op_grad(op, RNG.normal(size=(3, 4)))


def test_shared_subexpression_gradient():
    # y = x*x reused twice; gradient must count both paths
    p = nn.Parameter(np.array([1.5]))
    y = p * p
    (y + y).sum().backward()
    np.testing.assert_allclose(p.grad, [6.0], rtol=1e-12)


# -- matmul / shape ops ---------------------------------------------------


def test_matmul_2d_gradients():
    check_op_grad(lambda t: nn.matmul(t, nn.Tensor(W2)), RNG.normal(size=(5, 4)))


W2 = np.random.default_rng(7).normal(size=(4, 3))


def test_matmul_weight_gradient_with_3d_input():
    x = RNG.normal(size=(2, 5, 4))
    w = nn.Parameter(W2.copy())
    nn.matmul(nn.Tensor(x), w).sum().backward()
    expected = x.reshape(-1, 4).T @ np.ones((10, 3))
    np.testing.assert_allclose(w.grad, expected, rtol=1e-12)


def test_matmul_batched_gradients():
    a = RNG.normal(size=(2, 3, 4, 5))
    b = nn.Parameter(RNG.normal(size=(2, 3, 5, 6)))
    nn.matmul(nn.Tensor(a), b).sum().backward()
    expected = np.matmul(a.swapaxes(-1, -2), np.ones((2, 3, 4, 6)))
    np.testing.assert_allclose(b.grad, expected, rtol=1e-12)


def test_matmul_batch_dim_mismatch_is_configuration_error():
    with pytest.raises(ConfigurationError):
        nn.matmul(nn.Tensor(np.ones((2, 3, 4))), nn.Tensor(np.ones((3, 4, 5))))


def test_reshape_swapaxes_take_concat_gradients():
    def op(t):
        a = t.reshape(2, 6).swapaxes(0, 1)
        b = a[1:4]
        return nn.concatenate([b, b], axis=0) * 2.0

    check_op_grad(op, RNG.normal(size=(3, 4)))


# -- nonlinearities -------------------------------------------------------


def test_gelu_zero_and_asymptotes():
    x = nn.Tensor(np.array([0.0, 30.0, -30.0]))
    y = nn.gelu(x).data
    assert y[0] == 0.0
    assert abs(y[1] - 30.0) < 1e-12
    assert abs(y[2]) < 1e-12


def test_gelu_at_one_matches_high_precision_erf():
    # x * Phi(x) at x=1 via 50-digit mpmath
    mpmath.mp.dps = 50
    expected = float(1 * mpmath.ncdf(1))
    got = float(nn.gelu(nn.Tensor(np.array([1.0]))).data[0])
    assert abs(got - expected) < 1e-15
    assert abs(got - 0.8413447460685429) < 1e-15


def test_gelu_gradient_matches_fd():
    check_op_grad(nn.gelu, RNG.normal(size=(4, 5)) * 2.0)


def test_softmax_uniform_and_masked():
    y = nn.softmax(nn.Tensor(np.zeros((2, 4)))).data
    np.testing.assert_allclose(y, 0.25)
    masked = np.array([[1.0, -np.inf, 2.0]])
    ym = nn.softmax(nn.Tensor(masked)).data
    assert ym[0, 1] == 0.0
    assert abs(ym.sum() - 1.0) < 1e-12


def test_softmax_matches_direct_exp_normalize():
    x = RNG.normal(size=(5, 9))
    got = nn.softmax(nn.Tensor(x), axis=-1).data
    e = np.exp(x)
    np.testing.assert_allclose(got, e / e.sum(-1, keepdims=True), atol=1e-12)


def test_softmax_gradient_matches_fd():
    check_op_grad(lambda t: nn.softmax(t, axis=-1) * nn.Tensor(SMW), RNG.normal(size=(3, 6)))


SMW = np.random.default_rng(3).normal(size=(3, 6))


# -- dropout ---------------------------------------------------------------


def test_dropout_eval_is_identity():
    x = nn.Tensor(RNG.normal(size=(8, 8)))
    y = nn.dropout(x, 0.5, training=False)
    assert y is x


def test_dropout_train_preserves_expectation():
    nn.set_seed(123)
    x = nn.Tensor(np.ones((200, 200)))
    y = nn.dropout(x, 0.3, training=True)
    kept = y.data[y.data > 0]
    np.testing.assert_allclose(kept, 1.0 / 0.7, rtol=1e-12)
    assert abs(y.data.mean() - 1.0) < 0.01


def test_dropout_gradient_uses_same_mask():
    nn.set_seed(5)
    p = nn.Parameter(np.ones((10, 10)))
    y = nn.dropout(p, 0.4, training=True)
    y.sum().backward()
    np.testing.assert_array_equal(p.grad, y.data)


# -- conv1d ----------------------------------------------------------------


def test_conv1d_identity_kernel():
    x = nn.Tensor(np.array([[1.0, 2.0, 3.0]]))
    w = nn.Tensor(np.array([[[0.0, 1.0, 0.0]]]))
    y = nn.conv1d(x, w, dilation=1)
    np.testing.assert_array_equal(y.data, [[1.0, 2.0, 3.0]])


def test_conv1d_box_kernel_hand_convolution():
    x = nn.Tensor(np.array([[1.0, 1.0, 1.0, 1.0]]))
    w = nn.Tensor(np.array([[[1.0, 1.0, 1.0]]]))
    y = nn.conv1d(x, w)
    np.testing.assert_array_equal(y.data, [[2.0, 3.0, 3.0, 2.0]])


def test_conv1d_zero_kernel_gives_bias():
    x = nn.Tensor(RNG.normal(size=(2, 3, 7)))
    w = nn.Tensor(np.zeros((4, 3, 5)))
    b = nn.Tensor(np.array([1.0, -2.0, 0.5, 3.0]))
    y = nn.conv1d(x, w, b).data
    for ch, val in enumerate([1.0, -2.0, 0.5, 3.0]):
        np.testing.assert_array_equal(y[:, ch, :], val)


def test_conv1d_matches_direct_convolution_with_dilation():
    # brute-force same-length dilated convolution oracle
    b, c, n, o, k, dil = 2, 3, 11, 4, 3, 2
    x = RNG.normal(size=(b, c, n))
    w = RNG.normal(size=(o, c, k))
    bias = RNG.normal(size=o)
    pad = (k - 1) * dil // 2
    expected = np.zeros((b, o, n))
    for bi in range(b):
        for oi in range(o):
            for t in range(n):
                acc = bias[oi]
                for ci in range(c):
                    for ki in range(k):
                        src = t - pad + ki * dil
                        if 0 <= src < n:
                            acc += x[bi, ci, src] * w[oi, ci, ki]
                expected[bi, oi, t] = acc
    got = nn.conv1d(nn.Tensor(x), nn.Tensor(w), nn.Tensor(bias), dilation=dil).data
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_conv1d_output_length_preserved():
    y = nn.conv1d(
        nn.Tensor(RNG.normal(size=(1, 2, 33))),
        nn.Tensor(RNG.normal(size=(5, 2, 7))),
        dilation=4,
    )
    assert y.data.shape == (1, 5, 33)


def test_conv1d_shape_errors():
    x = nn.Tensor(np.ones((1, 2, 8)))
    with pytest.raises(ConfigurationError):
        nn.conv1d(x, nn.Tensor(np.ones((3, 5, 3))))  # channel mismatch
    with pytest.raises(ConfigurationError):
        nn.conv1d(x, nn.Tensor(np.ones((3, 2, 4))))  # even kernel


def test_conv1d_gradients_match_fd():
    x = RNG.normal(size=(2, 3, 9))
    w = nn.Parameter(RNG.normal(size=(4, 3, 3)))
    b = nn.Parameter(RNG.normal(size=4))

    def loss_fn():
        out = nn.conv1d(nn.Tensor(x), w, b, dilation=2)
        return (out * out).mean()

    assert nn.grad_check(loss_fn, [w, b]) <= 1e-6

    # and wrt the input
    def op(t):
        return nn.conv1d(t, nn.Tensor(w.data), nn.Tensor(b.data), dilation=2)

    check_op_grad(op, x.copy())


# -- normalization ---------------------------------------------------------


def test_layer_norm_constant_vector_zeros_before_affine():
    g = nn.Tensor(np.ones(6))
    bta = nn.Tensor(np.zeros(6))
    y = T.layer_norm(nn.Tensor(np.full((2, 6), 3.3)), g, bta).data
    np.testing.assert_allclose(y, 0.0, atol=1e-12)


def test_layer_norm_output_statistics():
    x = RNG.normal(size=(4, 16)) * 5 + 2
    y = T.layer_norm(nn.Tensor(x), nn.Tensor(np.ones(16)), nn.Tensor(np.zeros(16))).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-9)
    np.testing.assert_allclose(y.std(axis=-1), 1.0, atol=1e-4)


def test_layer_norm_idempotent_up_to_affine():
    x = RNG.normal(size=(3, 32))
    x = (x - x.mean(-1, keepdims=True)) / x.std(-1, keepdims=True)
    ones, zeros = nn.Tensor(np.ones(32)), nn.Tensor(np.zeros(32))
    once = T.layer_norm(nn.Tensor(x), ones, zeros).data
    twice = T.layer_norm(nn.Tensor(once), ones, zeros).data
    np.testing.assert_allclose(once, twice, atol=1e-4)


def test_layer_norm_gradients_match_fd():
    gamma = nn.Parameter(RNG.normal(size=8) + 1.0)
    beta = nn.Parameter(RNG.normal(size=8))
    x = RNG.normal(size=(3, 8))

    def loss_fn():
        y = T.layer_norm(nn.Tensor(x), gamma, beta)
        return (y * y).mean()

    assert nn.grad_check(loss_fn, [gamma, beta]) <= 1e-6
    check_op_grad(
        lambda t: T.layer_norm(t, nn.Tensor(gamma.data), nn.Tensor(beta.data)),
        x.copy(),
        tol=1e-5,
    )


def test_batch_norm_constant_channel_zeros():
    bn = nn.BatchNorm1d(3)
    x = nn.Tensor(np.full((4, 3, 5), 7.0))
    y = bn(x).data
    np.testing.assert_allclose(y, 0.0, atol=1e-9)


def test_batch_norm_train_normalizes_then_eval_uses_running():
    nn.set_seed(0)
    bn = nn.BatchNorm1d(2)
    x = RNG.normal(size=(8, 2, 16)) * 3 + 1
    y = bn(nn.Tensor(x)).data
    np.testing.assert_allclose(y.mean(axis=(0, 2)), 0.0, atol=1e-9)
    np.testing.assert_allclose(y.var(axis=(0, 2)), 1.0, atol=1e-4)
    bn.eval()
    y1 = bn(nn.Tensor(x)).data
    y2 = bn(nn.Tensor(x)).data
    np.testing.assert_array_equal(y1, y2)  # eval mode deterministic


def test_batch_norm_eval_before_training_uses_identity_stats():
    bn = nn.BatchNorm1d(2).eval()
    x = RNG.normal(size=(2, 2, 4))
    y = bn(nn.Tensor(x)).data
    np.testing.assert_allclose(y, x / np.sqrt(1 + 1e-5), rtol=1e-12)


def test_batch_norm_gradients_match_fd():
    bn = nn.BatchNorm1d(3)
    bn.gamma.data[:] = RNG.normal(size=3) + 1.0
    bn.beta.data[:] = RNG.normal(size=3)
    x = RNG.normal(size=(4, 3, 6))

    def loss_fn():
        y = bn(nn.Tensor(x))
        return (y * y * y / 3.0).sum()

    assert nn.grad_check(loss_fn, [bn.gamma, bn.beta]) <= 1e-6

    # weight the output so the input gradient is not identically zero
    # (per-channel sums of normalized values vanish by construction)
    bnw = np.random.default_rng(11).normal(size=(4, 3, 6))

    def op(t):
        y = T.batch_norm(
            t, nn.Tensor(bn.gamma.data), nn.Tensor(bn.beta.data),
            np.zeros(3), np.ones(3), training=True,
        )
        return y * nn.Tensor(bnw)

    check_op_grad(op, x.copy(), tol=1e-5)


# -- finiteness property ----------------------------------------------------


def test_forward_ops_finite_on_finite_inputs():
    x = RNG.normal(size=(2, 4, 12)) * 50
    w = RNG.normal(size=(4, 4, 3))
    outs = [
        nn.conv1d(nn.Tensor(x), nn.Tensor(w)).data,
        nn.gelu(nn.Tensor(x)).data,
        nn.softmax(nn.Tensor(x), axis=-1).data,
        T.layer_norm(nn.Tensor(x), nn.Tensor(np.ones(12)), nn.Tensor(np.zeros(12))).data,
    ]
    for out in outs:
        assert np.all(np.isfinite(out))
