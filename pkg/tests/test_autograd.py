"""Tape construction, backward accumulation, and finite-difference checks."""

import numpy as np
import pytest

from reafuse import tensor as ops
from reafuse.autograd import Tape, backward, grad_and_value, gradcheck
from reafuse.groupequiv import ReFeatureMap, g_act, init_group_conv, group_conv
from reafuse.reca import init_reca, reca_forward
from reafuse.tensor import Rng, ShapeError, Tensor


def test_grad_of_sum_is_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 5)), requires_grad=True)
    grads = backward(ops.tsum(x))
    np.testing.assert_array_equal(grads[id(x)], np.ones((3, 5)))


def test_grad_of_sigmoid_sum_at_zero_is_quarter():
    x = Tensor.zeros((4, 4), requires_grad=True)
    grads = backward(ops.tsum(ops.sigmoid(x)))
    np.testing.assert_allclose(grads[id(x)], np.full((4, 4), 0.25), rtol=0, atol=1e-15)


def test_backward_linearity_is_exact():
    x = Tensor(np.random.default_rng(1).normal(size=(6,)), requires_grad=True)
    g1 = backward(ops.tsum(ops.mul(x, x)))[id(x)]
    g3 = backward(ops.affine(ops.tsum(ops.mul(x, x)), 3.0, 0.0))[id(x)]
    np.testing.assert_array_equal(g3, 3.0 * g1)


def test_tape_is_in_execution_order():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    y = ops.mul(ops.add(x, x), ops.sigmoid(x))
    tape = Tape.trace(ops.tsum(y))
    seqs = [n.seq for n in tape.nodes]
    assert seqs == sorted(seqs)
    # every parent that is itself an op appears before its child
    pos = {id(n): i for i, n in enumerate(tape.nodes)}
    for n in tape.nodes:
        for p in n.parents:
            if id(p) in pos:
                assert pos[id(p)] < pos[id(n)]
    assert tape.root.item() == ops.tsum(y).item()


def test_backward_rejects_non_scalar_and_foreign_tape():
    x = Tensor(np.ones((3,)), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(ops.mul(x, x))
    loss_a = ops.tsum(x)
    loss_b = ops.tsum(ops.mul(x, x))
    with pytest.raises(ValueError):
        backward(loss_a, tape=Tape.trace(loss_b))


def test_shared_subexpression_accumulates_once_per_use():
    # loss = sum((x + x)^2) = sum(4 x^2)  =>  dloss/dx = 8x
    x = Tensor(np.random.default_rng(2).normal(size=(5,)), requires_grad=True)
    y = ops.add(x, x)
    grads = backward(ops.tsum(ops.mul(y, y)))
    np.testing.assert_allclose(grads[id(x)], 8.0 * x.data, rtol=1e-12)
    # the intermediate also has its gradient retained
    np.testing.assert_allclose(grads[id(y)], 2.0 * y.data, rtol=1e-12)


def test_wrt_zero_fills_disconnected_tensors():
    x = Tensor(np.ones((2,)), requires_grad=True)
    unused = Tensor(np.ones((3, 3)), requires_grad=True)
    grads = backward(ops.tsum(x), wrt=[x, unused])
    np.testing.assert_array_equal(grads[id(unused)], np.zeros((3, 3)))


def test_grad_and_value():
    x = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    grads, value = grad_and_value(lambda: ops.tsum(ops.mul(x, x)), [x])
    assert value == pytest.approx(5.0)
    np.testing.assert_allclose(grads[id(x)], [4.0, -2.0])


def test_gradcheck_validates_step_size():
    x = Tensor(np.ones((2,)), requires_grad=True)
    with pytest.raises(ValueError):
        gradcheck(lambda: ops.tsum(x), [x], Rng(0), h=1e-2)
    with pytest.raises(ValueError):
        gradcheck(lambda: ops.tsum(x), [x], Rng(0), h=1e-8)


def test_gradcheck_raises_on_non_finite():
    x = Tensor(np.zeros((2,)), requires_grad=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        with pytest.raises(FloatingPointError):
            gradcheck(lambda: ops.tsum(ops.div(Tensor(np.ones(2)), x)), [x], Rng(0))


def test_gradcheck_flags_a_wrong_gradient():
    # a deliberately broken op: forward is x^2 but backward claims d/dx = 1
    x = Tensor(np.random.default_rng(3).normal(size=(4,)) + 2.0, requires_grad=True)

    def broken_square(t):
        out = Tensor(t.data * t.data)
        from reafuse.tensor import _record
        return _record(out, "broken", (t,), lambda g: (g,))

    report = gradcheck(lambda: ops.tsum(broken_square(x)), [x], Rng(1))
    assert not report.passed
    assert report.failures


def test_gradcheck_on_reca_small_config():
    rng = Rng(7)
    n, k, r = 4, 2, 2
    params = init_reca(rng.derive("p"), k * n, n, r)
    x = Tensor(rng.derive("x").uniform((2, k * n, 4, 4)), requires_grad=True)

    def loss():
        out = reca_forward(ReFeatureMap(x, k, n), params)
        return ops.tsum(ops.mul(out.data, out.data))

    report = gradcheck(loss, [*params.tensors, x], rng.derive("coords"), h=1e-5, tol=1e-6)
    assert report.passed, str(report)
    assert report.checked >= 50


def test_gradient_of_equivariant_map_commutes_with_group_action():
    # invariant loss L(x) = sum(f(x)^2) with equivariant f:
    # grad at a rotated input is the rotated gradient
    rng = Rng(11)
    n = 4
    params = init_group_conv(rng.derive("w"), 2, 2, n)
    x = Tensor(rng.derive("x").uniform((2, 2 * n, 6, 6)), requires_grad=True)

    def loss_of(data):
        t = Tensor(data, requires_grad=True)
        out = group_conv(ReFeatureMap(t, 2, n), params).data
        return t, ops.tsum(ops.mul(out, out))

    t0, loss0 = loss_of(x.data)
    g0 = backward(loss0)[id(t0)]
    for s in range(1, n):
        moved = g_act(ReFeatureMap(Tensor(x.data.copy()), 2, n), s)
        t1, loss1 = loss_of(moved.data.data)
        g1 = backward(loss1)[id(t1)]
        want = g_act(ReFeatureMap(Tensor(g0), 2, n), s).data.data
        denom = max(np.linalg.norm(g1), 1e-30)
        assert np.linalg.norm(g1 - want) / denom <= 1e-8
