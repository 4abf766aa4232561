"""
Tensors, the tape, and gradient checking
========================================

A walk through the float64 tensor core: build a small expression, pull
gradients off the recorded tape, and confirm them against central finite
differences.
"""

import numpy as np

from reafuse import Rng, Tensor, backward, grad_and_value, gradcheck
from reafuse import tensor as ops

# Every leaf that should receive a gradient is marked explicitly.
rng = Rng(7)
x = Tensor(rng.derive("x").uniform((2, 3)), requires_grad=True)
w = Tensor(rng.derive("w").uniform((3, 3)), requires_grad=True)

# Ops compose like plain functions; the tape records silently behind them.
y = ops.relu(ops.matmul(x, w))
loss = ops.tsum(ops.mul(y, y))
print("loss value:", loss.data)

# backward() walks the tape once and returns {id(tensor): gradient array}.
grads = backward(loss)
print("dL/dx shape:", grads[id(x)].shape)
print("dL/dw first row:", grads[id(w)][0])

# grad_and_value is the convenience wrapper used throughout the demos.
g, value = grad_and_value(lambda: ops.tsum(ops.sigmoid(x)), [x])
print("sigmoid' at x (should be in (0, 0.25]):", g[id(x)].max())

# The same machinery that the `reafuse gradcheck` command uses: compare the
# recorded gradient of every coordinate against (f(x+h) - f(x-h)) / 2h.
# The closure rebuilds the whole expression so each probe re-traces it.
def f():
    out = ops.relu(ops.matmul(x, w))
    return ops.tsum(ops.mul(out, out))

report = gradcheck(f, [x, w], rng.derive("fd"))
print(f"gradcheck: passed={report.passed} "
      f"max relative error={report.max_rel_error:.3e} "
      f"coords checked={report.checked}")

# Kinks are the classic finite-difference trap: relu is not differentiable at
# zero, so coordinates whose +h/-h probes land on different sides of the kink
# are excluded, not fudged.  The window has to be wider than the probe step to
# catch a coordinate sitting exactly on the kink.
z = Tensor(np.array([[-1.0, 1e-9, 1.0]]), requires_grad=True)
kinky = gradcheck(lambda: ops.tsum(ops.relu(z)), [z], rng.derive("kink"),
                  kink_window=1e-4)
print("coords skipped at the relu kink:", kinky.skipped_kinks)
