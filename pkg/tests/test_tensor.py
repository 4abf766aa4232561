"""Primitive op semantics checked against hand values and in-test loop oracles."""

import numpy as np
import pytest

from reafuse import tensor as ops
from reafuse.tensor import DegenerateStatisticsError, Rng, ShapeError, Tensor


def loop_conv2d(x, w, b, stride=1):
    # independent reference: pad, then accumulate in (kernel-row, kernel-col,
    # in-channel) order like the documented contract
    bs, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.zeros((bs, cin, h + 2 * ph, wd + 2 * pw))
    xp[:, :, ph:ph + h, pw:pw + wd] = x
    oh = (h + 2 * ph - kh) // stride + 1
    ow = (wd + 2 * pw - kw) // stride + 1
    out = np.zeros((bs, cout, oh, ow))
    for bi in range(bs):
        for co in range(cout):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ki in range(kh):
                        for kj in range(kw):
                            for ci in range(cin):
                                acc += xp[bi, ci, i * stride + ki, j * stride + kj] * w[co, ci, ki, kj]
                    out[bi, co, i, j] = acc + b[co]
    return out


def test_conv2d_zero_input_gives_zero_output():
    x = Tensor.zeros((1, 1, 4, 4))
    w = Tensor(np.random.default_rng(0).normal(size=(2, 1, 3, 3)))
    out = ops.conv2d(x, w, Tensor.zeros((2,)))
    assert np.all(out.data == 0.0)


def test_conv2d_identity_kernel_passthrough():
    x = Tensor(np.random.default_rng(1).normal(size=(2, 1, 5, 5)))
    w = Tensor(np.ones((1, 1, 1, 1)))
    out = ops.conv2d(x, w)
    np.testing.assert_array_equal(out.data, x.data)


def test_conv2d_matches_loop_oracle():
    rng = Rng(42)
    worst = 0.0
    for t in range(12):
        r = rng.derive(f"t{t}")
        bs, cin, cout = r.integer(1, 3), r.integer(1, 3), r.integer(1, 4)
        size = r.integer(3, 7)
        k = 3 if t % 2 else 1
        stride = 2 if size % 2 == 0 and t % 3 == 0 else 1
        x = r.uniform((bs, cin, size, size))
        w = r.uniform((cout, cin, k, k))
        b = r.uniform((cout,))
        got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride).data
        want = loop_conv2d(x, w, b, stride)
        worst = max(worst, np.abs(got - want).max())
    assert worst <= 1e-12


def test_conv2d_rejects_even_kernel_and_bad_stride():
    x = Tensor.zeros((1, 1, 4, 4))
    with pytest.raises(ShapeError):
        ops.conv2d(x, Tensor.zeros((1, 1, 2, 2)))
    with pytest.raises(ShapeError):
        ops.conv2d(x, Tensor.zeros((1, 1, 3, 3)), stride=3)
    with pytest.raises(ShapeError):
        ops.conv2d(x, Tensor.zeros((1, 2, 3, 3)))  # channel mismatch


def test_rot90_quarter_turn_convention():
    # counter-clockwise positive: [[1,2],[3,4]] -> [[2,4],[1,3]]
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(ops.rot90(x, 1).data, [[2.0, 4.0], [1.0, 3.0]])


def test_rot90_cycle_and_composition():
    x = Tensor(np.random.default_rng(3).normal(size=(2, 3, 4, 4)))
    np.testing.assert_array_equal(ops.rot90(x, 0).data, x.data)
    np.testing.assert_array_equal(ops.rot90(x, 4).data, x.data)
    for a in range(4):
        for b in range(4):
            lhs = ops.rot90(ops.rot90(x, a), b).data
            rhs = ops.rot90(x, (a + b) % 4).data
            np.testing.assert_array_equal(lhs, rhs)


def test_global_avg_pool_values_and_rotation_invariance():
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert ops.global_avg_pool(x).data.reshape(()) == 2.5
    const = Tensor.full((2, 3, 5, 5), 7.25)
    assert np.all(ops.global_avg_pool(const).data == 7.25)
    r = Tensor(np.random.default_rng(4).normal(size=(2, 3, 6, 6)))
    base = ops.global_avg_pool(r).data
    for s in range(1, 4):
        assert np.abs(ops.global_avg_pool(ops.rot90(r, s)).data - base).max() <= 1e-12


def test_upsample_nearest_definition():
    x = Tensor(np.array([[[[1.0]]]]))
    np.testing.assert_array_equal(ops.upsample_nearest2x(x).data,
                                  [[[[1.0, 1.0], [1.0, 1.0]]]])
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    want = [[[[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]]]
    np.testing.assert_array_equal(ops.upsample_nearest2x(x).data, want)


def test_upsample_commutes_with_rot90_bit_exact():
    x = Tensor(np.random.default_rng(5).normal(size=(2, 4, 5, 5)))
    for s in range(4):
        a = ops.upsample_nearest2x(ops.rot90(x, s)).data
        b = ops.rot90(ops.upsample_nearest2x(x), s).data
        np.testing.assert_array_equal(a, b)


def test_blockmean2x_is_exact_block_average():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    got = ops.blockmean2x(Tensor(x)).data
    want = np.array([[[[2.5, 4.5], [10.5, 12.5]]]])
    np.testing.assert_array_equal(got, want)
    with pytest.raises(ShapeError):
        ops.blockmean2x(Tensor.zeros((1, 1, 5, 5)))


def test_elementwise_definitions():
    assert ops.sigmoid(Tensor.zeros(())).item() == 0.5
    assert ops.relu(Tensor(np.array(-3.0))).item() == 0.0
    assert ops.relu(Tensor(np.array(3.0))).item() == 3.0
    x = Tensor(np.random.default_rng(6).normal(size=(3, 4)))
    np.testing.assert_array_equal(ops.add(x, Tensor.zeros((3, 4))).data, x.data)


def test_sigmoid_extremes_stay_finite():
    x = Tensor(np.array([-750.0, -50.0, 0.0, 50.0, 750.0]))
    out = ops.sigmoid(x).data
    assert np.all(np.isfinite(out))
    assert out[0] == 0.0 and out[-1] == 1.0


def test_broadcast_is_restricted_to_trailing_spatial_dims():
    gate = Tensor(np.random.default_rng(7).normal(size=(2, 3, 1, 1)))
    x = Tensor(np.random.default_rng(8).normal(size=(2, 3, 4, 4)))
    out = ops.mul(x, gate)
    np.testing.assert_allclose(out.data, x.data * gate.data)
    with pytest.raises(ShapeError):
        ops.add(Tensor.zeros((2, 3)), Tensor.zeros((3, 2)))


def test_batchnorm_statistics():
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(2.0, 3.0, size=(8, 4, 6, 6)))
    gamma = Tensor(np.ones(4))
    beta = Tensor.zeros((4,))
    out = ops.batchnorm(x, gamma, beta, reduce_axes=(0, 2, 3)).data
    assert np.abs(out.mean(axis=(0, 2, 3))).max() <= 1e-10
    assert np.abs(out.var(axis=(0, 2, 3)) - 1.0).max() <= 1e-3  # eps-regularized

    # gamma=0 kills the signal entirely
    beta2 = Tensor(np.array([1.0, -2.0, 0.5, 3.0]))
    out2 = ops.batchnorm(x, Tensor.zeros((4,)), beta2, reduce_axes=(0, 2, 3)).data
    np.testing.assert_array_equal(out2, np.broadcast_to(beta2.data[None, :, None, None], x.shape))

    # constant input per channel -> zeros under gamma=1, beta=0
    const = Tensor.full((4, 3, 2, 2), 5.0)
    out3 = ops.batchnorm(const, Tensor(np.ones(3)), Tensor.zeros((3,)), reduce_axes=(0, 2, 3)).data
    assert np.abs(out3).max() <= 1e-12


def test_batchnorm_degenerate_statistics_error():
    x = Tensor.zeros((1, 3))
    with pytest.raises(DegenerateStatisticsError):
        ops.batchnorm(x, Tensor(np.ones(3)), Tensor.zeros((3,)), reduce_axes=(0,))
    with pytest.raises(ShapeError):
        ops.batchnorm(Tensor.zeros((4, 3, 2, 2)), Tensor(np.ones(3)), Tensor.zeros((3,)),
                      reduce_axes=(0,))  # must leave exactly one axis
    with pytest.raises(ValueError):
        ops.batchnorm(Tensor.zeros((4, 3)), Tensor(np.ones(3)), Tensor.zeros((3,)),
                      reduce_axes=(0,), eps=0.0)


def test_take_concat_stack_roundtrip():
    x = Tensor(np.arange(24.0).reshape(2, 3, 4))
    parts = [ops.take(x, [c], axis=1) for c in range(3)]
    back = ops.concat(parts, axis=1)
    np.testing.assert_array_equal(back.data, x.data)
    stacked = ops.stack([Tensor(np.ones((2, 2))), Tensor.zeros((2, 2))], axis=0)
    assert stacked.shape == (2, 2, 2)
    with pytest.raises(ShapeError):
        ops.take(x, [5], axis=1)


def test_matmul_and_affine():
    a = np.random.default_rng(10).normal(size=(3, 4))
    b = np.random.default_rng(11).normal(size=(4, 5))
    np.testing.assert_allclose(ops.matmul(Tensor(a), Tensor(b)).data, a @ b)
    y = ops.affine(Tensor(a), 2.0, -1.0).data
    np.testing.assert_array_equal(y, 2.0 * a - 1.0)


def test_rng_determinism_and_derivation_independence():
    a = Rng(123).uniform((4, 4))
    b = Rng(123).uniform((4, 4))
    np.testing.assert_array_equal(a, b)
    # derived streams differ from the parent and from each other
    c = Rng(123).derive("x").uniform((4, 4))
    d = Rng(123).derive("y").uniform((4, 4))
    assert np.abs(a - c).max() > 0 and np.abs(c - d).max() > 0
    assert Rng(123).derive("x").seed == Rng(123).derive("x").seed


def test_values_stay_finite_through_op_chain():
    r = Rng(12)
    x = Tensor(r.uniform((2, 4, 8, 8), -5.0, 5.0))
    w = Tensor(r.uniform((4, 4, 3, 3)))
    out = ops.sigmoid(ops.conv2d(ops.relu(x), w))
    out = ops.blockmean2x(ops.upsample_nearest2x(out))
    assert np.all(np.isfinite(out.data))
