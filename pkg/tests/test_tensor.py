"""Differentiation engine: forward oracles and finite-difference checks."""

import numpy as np
import pytest

from igan import tensor as T
from igan.errors import ConfigError, ContractError, DegenerateBatchError, ShapeError

from helpers import away_from_kinks, check_grads, rng


# ---------------------------------------------------------------------------
# forward-value oracles
# ---------------------------------------------------------------------------


def test_matmul_identity_is_noop():
    a = rng(0).normal(size=(4, 4))
    out = T.matmul(T.Tensor(a), T.Tensor(np.eye(4)))
    np.testing.assert_array_equal(out.data, a)


def test_matmul_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((4, 2))))


def test_conv2d_ones_kernel_sums_blocks():
    # 1x1x4x4 ramp, 2x2 ones kernel, stride 1, no pad: each output is the
    # sum of the 2x2 window; verified against an explicit loop
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    k = np.ones((1, 1, 2, 2))
    out = T.conv2d(T.Tensor(x), T.Tensor(k), stride=1, pad=0)
    want = np.zeros((1, 1, 3, 3))
    for i in range(3):
        for j in range(3):
            want[0, 0, i, j] = x[0, 0, i : i + 2, j : j + 2].sum()
    np.testing.assert_allclose(out.data, want)


def test_conv2d_multichannel_against_loops():
    g = rng(1)
    x = g.normal(size=(2, 3, 6, 6))
    k = g.normal(size=(4, 3, 4, 4))
    out = T.conv2d(T.Tensor(x), T.Tensor(k), stride=2, pad=1)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    want = np.zeros((2, 4, 3, 3))
    for b in range(2):
        for o in range(4):
            for i in range(3):
                for j in range(3):
                    patch = xp[b, :, 2 * i : 2 * i + 4, 2 * j : 2 * j + 4]
                    want[b, o, i, j] = (patch * k[o]).sum()
    np.testing.assert_allclose(out.data, want, atol=1e-12)


def test_conv2d_stride2_block_sums():
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    k = np.ones((1, 1, 2, 2))
    out = T.conv2d(T.Tensor(x), T.Tensor(k), stride=2, pad=0)
    want = np.zeros((1, 1, 2, 2))
    for i in range(2):
        for j in range(2):
            want[0, 0, i, j] = x[0, 0, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].sum()
    np.testing.assert_allclose(out.data, want)


def test_conv2d_unit_kernel_is_identity():
    x = rng(20).normal(size=(2, 1, 5, 5))
    k = np.ones((1, 1, 1, 1))
    out = T.conv2d(T.Tensor(x), T.Tensor(k), stride=1, pad=0)
    np.testing.assert_array_equal(out.data, x)


def test_conv2d_transposed_unit_kernel_is_identity():
    x = rng(21).normal(size=(2, 1, 5, 5))
    k = np.ones((1, 1, 1, 1))
    out = T.conv2d_transposed(T.Tensor(x), T.Tensor(k), stride=1, pad=0)
    np.testing.assert_array_equal(out.data, x)


def test_conv2d_rejects_non_integer_output():
    with pytest.raises(ConfigError):
        T.conv2d(T.Tensor(np.zeros((1, 1, 5, 5))), T.Tensor(np.zeros((1, 1, 2, 2))),
                 stride=2, pad=0)


def test_conv2d_transposed_output_extent():
    # (h - 1) * stride - 2 * pad + k: 4 -> 8 for the 4x4/2/1 stack
    x = T.Tensor(np.zeros((1, 3, 4, 4)))
    k = T.Tensor(np.zeros((3, 2, 4, 4)))
    out = T.conv2d_transposed(x, k, stride=2, pad=1)
    assert out.data.shape == (1, 2, 8, 8)


def test_conv_adjoint_identity():
    # <conv(x, k), y> == <x, tconv(y, k)> for the shared kernel layout
    g = rng(2)
    x = g.normal(size=(2, 3, 8, 8))
    k = g.normal(size=(5, 3, 4, 4))
    y = g.normal(size=(2, 5, 4, 4))
    lhs = (T.conv2d(T.Tensor(x), T.Tensor(k), stride=2, pad=1).data * y).sum()
    rhs = (T.conv2d_transposed(T.Tensor(y), T.Tensor(k), stride=2, pad=1).data * x).sum()
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_sigmoid_at_zero():
    assert T.sigmoid(T.Tensor(np.zeros(3))).data == pytest.approx([0.5, 0.5, 0.5])


def test_mse_of_identical_inputs_is_zero():
    x = rng(3).normal(size=(4, 5))
    assert T.mse(T.Tensor(x), T.Tensor(x.copy())).item() == 0.0


def test_concat_matches_numpy():
    g = rng(4)
    a, b = g.normal(size=(3, 2)), g.normal(size=(3, 4))
    out = T.concat(T.Tensor(a), T.Tensor(b), axis=1)
    np.testing.assert_array_equal(out.data, np.concatenate([a, b], axis=1))


def test_concat_rank1():
    out = T.concat(T.Tensor(np.array([1.0, 2.0])), T.Tensor(np.array([3.0])), axis=0)
    np.testing.assert_array_equal(out.data, [1.0, 2.0, 3.0])


def test_matmul_grad_of_sum_is_column_sums():
    g = rng(22)
    a, b = g.normal(size=(3, 4)), g.normal(size=(4, 2))
    ta = T.Tensor(a, requires_grad=True)
    prod = T.matmul(ta, T.Tensor(b))
    T.backward(T.scale(T.mean(prod), prod.data.size))
    np.testing.assert_allclose(ta.grad, np.tile(b.sum(axis=1), (3, 1)), rtol=1e-12)


def test_concat_extent_mismatch_raises():
    with pytest.raises(ShapeError):
        T.concat(T.Tensor(np.zeros((3, 2))), T.Tensor(np.zeros((4, 2))), axis=1)


def test_clamp_values():
    out = T.clamp(T.Tensor(np.array([-1.0, 0.5, 2.0])), 0.0, 1.0)
    np.testing.assert_array_equal(out.data, [0.0, 0.5, 1.0])


# ---------------------------------------------------------------------------
# backward correctness
# ---------------------------------------------------------------------------


def test_sum_of_squares_gradient():
    x = T.Tensor(np.array([[3.0]]), requires_grad=True)
    T.backward(T.mean(T.mul(x, x)))
    assert x.grad[0, 0] == pytest.approx(6.0)


def test_leaf_reused_twice_accumulates():
    x = T.Tensor(np.array([[2.0]]), requires_grad=True)
    # f = x*x + x -> df/dx = 2x + 1 = 5
    T.backward(T.mean(T.add(T.mul(x, x), x)))
    assert x.grad[0, 0] == pytest.approx(5.0)


def test_unreachable_leaf_keeps_zero_grad():
    x = T.Tensor(np.ones((2, 2)), requires_grad=True)
    y = T.Tensor(np.ones((2, 2)), requires_grad=True)
    T.backward(T.mean(x))
    np.testing.assert_array_equal(y.grad, np.zeros((2, 2)))


def test_backward_requires_scalar():
    x = T.Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        T.backward(T.add(x, x))


def test_no_grad_blocks_recording():
    x = T.Tensor(np.ones((2, 2)), requires_grad=True)
    with T.no_grad():
        y = T.mul(x, x)
    assert y._backward is None and not y.requires_grad


def test_backward_replay_is_deterministic():
    g = rng(5)
    a = g.normal(size=(3, 4))
    b = g.normal(size=(4, 2))
    grads = []
    for _ in range(2):
        ta = T.Tensor(a.copy(), requires_grad=True)
        tb = T.Tensor(b.copy(), requires_grad=True)
        T.backward(T.mean(T.tanh(T.matmul(ta, tb))))
        grads.append((ta.grad.copy(), tb.grad.copy()))
    np.testing.assert_array_equal(grads[0][0], grads[1][0])
    np.testing.assert_array_equal(grads[0][1], grads[1][1])


def test_bias_broadcast_gradient_sums_over_batch():
    x = T.Tensor(np.ones((5, 3)), requires_grad=True)
    bias = T.Tensor(np.zeros(3), requires_grad=True)
    T.backward(T.mean(T.add(x, bias)))
    np.testing.assert_allclose(bias.grad, np.full(3, 5.0 / 15.0))


@pytest.mark.parametrize("op", ["relu", "sigmoid", "tanh", "log", "clamp"])
def test_elementwise_gradients_match_fd(op):
    g = rng(6)
    x = away_from_kinks(g.uniform(-2.0, 2.0, size=(4, 5)))
    if op == "log":
        x = np.abs(x) + 0.5
    builders = {
        "relu": lambda t: T.mean(T.relu(t["x"])),
        "sigmoid": lambda t: T.mean(T.sigmoid(t["x"])),
        "tanh": lambda t: T.mean(T.tanh(t["x"])),
        "log": lambda t: T.mean(T.log(t["x"])),
        "clamp": lambda t: T.mean(T.clamp(t["x"], -1.5, 1.5)),
    }
    xc = x.copy()
    if op == "clamp":
        # keep every element at least one fd step away from the clip edges
        xc[np.abs(np.abs(xc) - 1.5) < 1e-2] = 0.5
    check_grads(builders[op], {"x": xc})


def test_matmul_gradients_match_fd():
    g = rng(7)
    check_grads(
        lambda t: T.mean(T.mul(T.matmul(t["a"], t["b"]), T.matmul(t["a"], t["b"]))),
        {"a": g.uniform(-2, 2, size=(3, 4)), "b": g.uniform(-2, 2, size=(4, 2))},
    )


def test_conv2d_gradients_match_fd():
    g = rng(8)
    check_grads(
        lambda t: T.mean(T.mul(T.conv2d(t["x"], t["k"], 2, 1),
                               T.conv2d(t["x"], t["k"], 2, 1))),
        {"x": g.uniform(-2, 2, size=(2, 2, 4, 4)), "k": g.uniform(-1, 1, size=(3, 2, 4, 4))},
    )


def test_conv2d_transposed_gradients_match_fd():
    g = rng(9)
    check_grads(
        lambda t: T.mean(T.mul(T.conv2d_transposed(t["x"], t["k"], 2, 1),
                               T.conv2d_transposed(t["x"], t["k"], 2, 1))),
        {"x": g.uniform(-2, 2, size=(2, 3, 2, 2)), "k": g.uniform(-1, 1, size=(3, 2, 4, 4))},
    )


def test_mse_gradients_match_fd():
    g = rng(10)
    check_grads(
        lambda t: T.mse(t["a"], t["b"]),
        {"a": g.uniform(-2, 2, size=(3, 4)), "b": g.uniform(-2, 2, size=(3, 4))},
    )


def test_concat_sum_axis_reshape_gradients_match_fd():
    g = rng(11)
    check_grads(
        lambda t: T.mean(T.mul(T.reshape(T.concat(t["a"], t["b"], axis=1), (2, 20)),
                               T.reshape(T.concat(t["a"], t["b"], axis=1), (2, 20)))),
        {"a": g.uniform(-2, 2, size=(2, 2, 5)), "b": g.uniform(-2, 2, size=(2, 2, 5))},
    )
    check_grads(
        lambda t: T.mean(T.mul(T.sum_axis(t["x"], 1), T.sum_axis(t["x"], 1))),
        {"x": g.uniform(-2, 2, size=(3, 4))},
    )


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


def _bn_state(nfeat):
    return (
        T.Tensor(np.ones(nfeat), requires_grad=True),
        T.Tensor(np.zeros(nfeat), requires_grad=True),
        T.Tensor(np.zeros(nfeat)),
        T.Tensor(np.ones(nfeat)),
    )


def test_batchnorm_constant_batch_is_zero():
    gamma, beta, rm, rv = _bn_state(3)
    x = T.Tensor(np.full((4, 3), 7.0))
    out = T.batchnorm(x, gamma, beta, rm, rv, mode="train")
    np.testing.assert_allclose(out.data, 0.0, atol=1e-3)


def test_batchnorm_train_normalizes():
    g = rng(12)
    gamma, beta, rm, rv = _bn_state(4)
    x = g.normal(loc=3.0, scale=2.0, size=(64, 4))
    out = T.batchnorm(T.Tensor(x), gamma, beta, rm, rv, mode="train")
    np.testing.assert_allclose(out.data.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.data.var(axis=0), 1.0, atol=1e-3)


def test_batchnorm_running_stats_update():
    g = rng(13)
    gamma, beta, rm, rv = _bn_state(2)
    x = g.normal(loc=1.0, scale=2.0, size=(10, 2))
    T.batchnorm(T.Tensor(x), gamma, beta, rm, rv, mode="train")
    mu, var = x.mean(axis=0), x.var(axis=0)
    np.testing.assert_allclose(rm.data, 0.1 * mu)
    np.testing.assert_allclose(rv.data, 0.9 + 0.1 * var * (10 / 9))


def test_batchnorm_zero_gamma_gives_beta():
    gamma, beta, rm, rv = _bn_state(3)
    gamma.data[:] = 0.0
    beta.data[:] = [1.0, -2.0, 0.5]
    x = rng(23).normal(size=(6, 3))
    out = T.batchnorm(T.Tensor(x), gamma, beta, rm, rv, mode="train")
    np.testing.assert_allclose(out.data, np.tile(beta.data, (6, 1)))


def test_batchnorm_eval_uses_running_stats():
    gamma, beta, rm, rv = _bn_state(2)
    rm.data[:] = [1.0, -1.0]
    rv.data[:] = [4.0, 0.25]
    x = np.array([[3.0, 0.0], [1.0, -1.0]])
    out = T.batchnorm(T.Tensor(x), gamma, beta, rm, rv, mode="eval")
    want = (x - rm.data) / np.sqrt(rv.data + 1e-5)
    np.testing.assert_allclose(out.data, want)
    # eval must leave the buffers untouched
    np.testing.assert_array_equal(rm.data, [1.0, -1.0])


def test_batchnorm_batch_of_one_raises():
    gamma, beta, rm, rv = _bn_state(2)
    with pytest.raises(DegenerateBatchError):
        T.batchnorm(T.Tensor(np.zeros((1, 2))), gamma, beta, rm, rv, mode="train")


def test_batchnorm_4d_per_channel():
    g = rng(14)
    gamma, beta, rm, rv = _bn_state(3)
    x = g.normal(loc=-2.0, scale=3.0, size=(8, 3, 4, 4))
    out = T.batchnorm(T.Tensor(x), gamma, beta, rm, rv, mode="train")
    np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.data.var(axis=(0, 2, 3)), 1.0, atol=1e-3)


@pytest.mark.parametrize("mode", ["train", "eval"])
def test_batchnorm_gradients_match_fd(mode):
    g = rng(15)

    def build(t):
        rm = T.Tensor(np.array([0.3, -0.2]))
        rv = T.Tensor(np.array([1.5, 0.7]))
        y = T.batchnorm(t["x"], t["gamma"], t["beta"], rm, rv, mode=mode)
        return T.mean(T.mul(y, y))

    check_grads(build, {
        "x": g.uniform(-2, 2, size=(6, 2)),
        "gamma": g.uniform(0.5, 1.5, size=(2,)),
        "beta": g.uniform(-0.5, 0.5, size=(2,)),
    }, rtol=1e-4)


def test_batchnorm_4d_gradients_match_fd():
    g = rng(16)

    def build(t):
        rm = T.Tensor(np.zeros(2))
        rv = T.Tensor(np.ones(2))
        y = T.batchnorm(t["x"], t["gamma"], t["beta"], rm, rv, mode="train")
        return T.mean(T.mul(y, y))

    check_grads(build, {
        "x": g.uniform(-2, 2, size=(3, 2, 2, 2)),
        "gamma": g.uniform(0.5, 1.5, size=(2,)),
        "beta": g.uniform(-0.5, 0.5, size=(2,)),
    }, rtol=1e-4)
