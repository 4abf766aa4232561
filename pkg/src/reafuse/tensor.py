"""Dense float64 tensors with a recorded reverse-mode graph.

Everything downstream (group convolutions, attention, fusion, pyramids) is
built from the small op set in this module.  Design constraints:

* float64 only, so equivariance checks can use tight tolerances;
* values are immutable after construction -- every op returns a new tensor;
* deterministic: the same inputs always produce bit-identical outputs.
  conv2d contracts its receptive field in a fixed (kernel-row, kernel-col,
  in-channel) flattening, so repeated runs are reproducible;
* rotation convention: positive quarter turns are counter-clockwise in the
  usual matrix-print orientation (row index down, column index right).
  ``rot90([[1,2],[3,4]], 1) == [[2,4],[1,3]]``.  Fixed here, used everywhere.

Each op that sees a ``requires_grad`` input records its parents and a closure
computing parent gradients; ``reafuse.autograd`` replays those records in
reverse execution order.
"""

from __future__ import annotations

import hashlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Rng",
    "ShapeError",
    "DegenerateStatisticsError",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "relu",
    "sigmoid",
    "power",
    "affine",
    "reshape",
    "transpose",
    "concat",
    "stack",
    "take",
    "tsum",
    "tmean",
    "rot90",
    "global_avg_pool",
    "upsample_nearest2x",
    "blockmean2x",
    "conv2d",
    "batchnorm",
]


class ShapeError(ValueError):
    """An operand shape violates an operation's contract."""


class DegenerateStatisticsError(ValueError):
    """Batch statistics would be computed over a single element."""


# Monotone id assigned at construction; reverse ids == reverse execution order.
_EXECUTION_COUNTER = itertools.count()

# When not None, relu appends a copy of each pre-activation it sees.  Used by
# gradcheck to detect finite-difference steps that straddle a relu kink.
_RELU_TRACE: list[np.ndarray] | None = None


class Tensor:
    """Immutable dense float64 array plus an optional autograd record.

    ``data`` is a contiguous row-major ndarray.  ``parents``/``backward_fn``
    are populated only for tensors produced by an op with at least one
    gradient-requiring input; leaves have neither.
    """

    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "op", "seq")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"
        self.seq = next(_EXECUTION_COUNTER)

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=np.float64), requires_grad)

    @staticmethod
    def ones(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.ones(shape, dtype=np.float64), requires_grad)

    @staticmethod
    def full(shape, value: float, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.full(shape, float(value), dtype=np.float64), requires_grad)

    # -- basic introspection ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad}, op={self.op})"

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Rng:
    """Seeded random source (PCG64): same seed, same sequence.

    Tests rely on distributional properties only, never on the exact values,
    so the stream does not need to match any other implementation.
    """

    def __init__(self, seed: int, algorithm: str = "pcg64"):
        if algorithm != "pcg64":
            raise ValueError(f"unknown rng algorithm {algorithm!r}")
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.algorithm = algorithm
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, shape, low: float = -1.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape).astype(np.float64)

    def integer(self, low: int, high: int) -> int:
        """Uniform integer in [low, high)."""
        return int(self._gen.integers(low, high))

    def choice(self, n: int, size: int) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=False)

    def derive(self, label: str) -> "Rng":
        """Independent child stream identified by ``label``.

        Stable across runs and independent of how much has been drawn from
        this stream; used to give every layer / variant its own seed.
        """
        digest = hashlib.blake2s(
            f"{self.seed}/{label}".encode("utf-8"), digest_size=8
        ).digest()
        return Rng(int.from_bytes(digest, "little"))


# -- graph plumbing --------------------------------------------------------------


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(out: Tensor, op: str, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
        out.op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- pointwise ops ----------------------------------------------------------------


def _broadcast_op(a, b, op_name: str, fwd, da, db) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = fwd(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"{op_name}: incompatible shapes {a.shape} and {b.shape}") from exc

    def backward(g: np.ndarray):
        return (
            _unbroadcast(da(g, a.data, b.data), a.shape),
            _unbroadcast(db(g, a.data, b.data), b.shape),
        )

    return _record(Tensor(data), op_name, (a, b), backward)


def add(a, b) -> Tensor:
    return _broadcast_op(a, b, "add", lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _broadcast_op(a, b, "sub", lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _broadcast_op(a, b, "mul", lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _broadcast_op(
        a, b, "div",
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


def neg(a) -> Tensor:
    a = _wrap(a)
    return _record(Tensor(-a.data), "neg", (a,), lambda g: (-g,))


def relu(a) -> Tensor:
    """max(0, x); the subgradient at the kink is taken as 0."""
    a = _wrap(a)
    if _RELU_TRACE is not None:
        _RELU_TRACE.append(a.data.copy())
    mask = a.data > 0.0
    return _record(Tensor(np.where(mask, a.data, 0.0)), "relu", (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    # tanh form avoids exp overflow for large negative inputs
    s = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return _record(Tensor(s), "sigmoid", (a,), lambda g: (g * s * (1.0 - s),))


def power(a, exponent: float) -> Tensor:
    a = _wrap(a)
    p = float(exponent)
    data = a.data ** p
    return _record(Tensor(data), "power", (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def affine(x, scale, shift) -> Tensor:
    """Pointwise scale-and-shift, broadcasting like add/mul."""
    return add(mul(x, scale), shift)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected two matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner axis mismatch, {a.shape[1]} (lhs columns) vs {b.shape[0]} (rhs rows)"
        )

    def backward(g: np.ndarray):
        return g @ b.data.T, a.data.T @ g

    return _record(Tensor(a.data @ b.data), "matmul", (a, b), backward)


# -- structural ops -----------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    shape = tuple(int(s) for s in shape)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from exc
    return _record(Tensor(data), "reshape", (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _wrap(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record(
        Tensor(np.transpose(a.data, axes)), "transpose", (a,),
        lambda g: (np.transpose(g, inverse),),
    )


def concat(tensors: Iterable, axis: int) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from exc
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray):
        slicer = [slice(None)] * g.ndim
        outs = []
        for i in range(len(ts)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            outs.append(g[tuple(slicer)])
        return outs

    return _record(Tensor(data), "concat", tuple(ts), backward)


def stack(tensors: Iterable, axis: int) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    try:
        data = np.stack([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in ts]}") from exc

    def backward(g: np.ndarray):
        return [np.take(g, i, axis=axis) for i in range(len(ts))]

    return _record(Tensor(data), "stack", tuple(ts), backward)


def take(a, indices, axis: int) -> Tensor:
    """Gather along ``axis``; duplicate indices accumulate in the gradient."""
    a = _wrap(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"take: indices must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise ShapeError(f"take: index out of range for axis {axis} with extent {a.shape[axis]}")
    data = np.take(a.data, idx, axis=axis)

    def backward(g: np.ndarray):
        ga = np.zeros_like(a.data)
        key = (slice(None),) * axis + (idx,)
        np.add.at(ga, key, g)
        return (ga,)

    return _record(Tensor(data), "take", (a,), backward)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(Tensor(data), "sum", (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    if axis is None:
        count = a.size
    elif isinstance(axis, int):
        count = a.shape[axis]
    else:
        count = int(np.prod([a.shape[ax] for ax in axis]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- spatial ops -------------------------------------------------------------------


def rot90(a, quarter_turns: int) -> Tensor:
    """Rotate the last two axes by ``quarter_turns`` * 90 degrees counter-clockwise.

    A pure index permutation (bit-exact).  Non-square inputs are allowed for
    odd turns; the two spatial extents swap.
    """
    a = _wrap(a)
    if a.ndim < 2:
        raise ShapeError(f"rot90: need at least 2 axes, got shape {a.shape}")
    k = int(quarter_turns) % 4
    data = np.ascontiguousarray(np.rot90(a.data, k, axes=(-2, -1)))
    return _record(
        Tensor(data), "rot90", (a,),
        lambda g: (np.ascontiguousarray(np.rot90(g, -k, axes=(-2, -1))),),
    )


def global_avg_pool(a) -> Tensor:
    """Mean over the spatial axes: [B,C,H,W] -> [B,C,1,1]."""
    a = _wrap(a)
    if a.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected [batch, channel, height, width], got {a.shape}")
    h, w = a.shape[2], a.shape[3]
    data = a.data.mean(axis=(2, 3), keepdims=True)

    def backward(g: np.ndarray):
        return (np.broadcast_to(g / (h * w), a.shape).copy(),)

    return _record(Tensor(data), "global_avg_pool", (a,), backward)


def upsample_nearest2x(a) -> Tensor:
    """Replicate every pixel into a 2x2 block: [B,C,H,W] -> [B,C,2H,2W].

    Nearest-neighbour is chosen deliberately: it commutes with rot90
    bit-exactly, which interpolating upsamplers do not at borders.
    """
    a = _wrap(a)
    if a.ndim != 4:
        raise ShapeError(f"upsample_nearest2x: expected 4 axes, got {a.shape}")
    data = np.repeat(np.repeat(a.data, 2, axis=2), 2, axis=3)
    b, c, h, w = a.shape

    def backward(g: np.ndarray):
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _record(Tensor(data), "upsample_nearest2x", (a,), backward)


def blockmean2x(a) -> Tensor:
    """Average non-overlapping 2x2 blocks: [B,C,H,W] -> [B,C,H/2,W/2].

    Requires even H and W.  The 2x2 block partition is mapped onto itself by
    quarter-turn rotations, so this downsampling commutes with rot90 exactly;
    a stride-2 sampling lattice does not (rotation on an even grid swaps even
    and odd pixel parities).
    """
    a = _wrap(a)
    if a.ndim != 4:
        raise ShapeError(f"blockmean2x: expected 4 axes, got {a.shape}")
    b, c, h, w = a.shape
    if h % 2:
        raise ShapeError(f"blockmean2x: height axis extent {h} is odd")
    if w % 2:
        raise ShapeError(f"blockmean2x: width axis extent {w} is odd")
    data = a.data.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g: np.ndarray):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return _record(Tensor(data), "blockmean2x", (a,), backward)


def conv2d(x, w, bias=None, stride: int = 1, pad: int | None = None) -> Tensor:
    """2-D cross-correlation of [B,Cin,H,W] with [Cout,Cin,kh,kw].

    ``pad=None`` means same padding, (k-1)/2 on each side.  The receptive
    field is flattened in (kernel-row, kernel-col, in-channel) order before
    the contraction, which fixes the accumulation order and makes results
    reproducible run to run.
    """
    x, w = _wrap(x), _wrap(w)
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input axis count {x.ndim} != 4 (batch, channel, height, width)")
    if w.ndim != 4:
        raise ShapeError(f"conv2d: kernel axis count {w.ndim} != 4 (out, in, kh, kw)")
    batch, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: channel axis mismatch, input has {cin}, kernel expects {cin_w}")
    if kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel height axis extent {kh} must be odd")
    if kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel width axis extent {kw} must be odd")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride {stride} not in (1, 2)")
    if pad is None:
        pad = (kh - 1) // 2
    pad = int(pad)
    if pad < 0:
        raise ShapeError(f"conv2d: negative padding {pad}")
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (wd + 2 * pad - kw) // stride + 1
    if out_h < 1:
        raise ShapeError(f"conv2d: height axis too small ({h}) for kernel {kh} with pad {pad}")
    if out_w < 1:
        raise ShapeError(f"conv2d: width axis too small ({wd}) for kernel {kw} with pad {pad}")

    b_t = _wrap(bias) if bias is not None else None
    if b_t is not None and b_t.shape != (cout,):
        raise ShapeError(f"conv2d: bias axis shape {b_t.shape} != ({cout},)")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))

    def tap(src: np.ndarray, ki: int, kj: int) -> np.ndarray:
        return src[
            :, :, ki : ki + (out_h - 1) * stride + 1 : stride,
            kj : kj + (out_w - 1) * stride + 1 : stride,
        ]

    # im2col in documented (kernel-row, kernel-col, in-channel) order
    cols = np.concatenate(
        [tap(xp, ki, kj) for ki in range(kh) for kj in range(kw)], axis=1
    ).reshape(batch, kh * kw * cin, out_h * out_w)
    wf = w.data.transpose(0, 2, 3, 1).reshape(cout, kh * kw * cin)
    out = np.matmul(wf, cols).reshape(batch, cout, out_h, out_w)
    if b_t is not None:
        out = out + b_t.data[:, None, None]

    def backward(g: np.ndarray):
        grad_w = np.empty_like(w.data)
        grad_xp = np.zeros_like(xp)
        for ki in range(kh):
            for kj in range(kw):
                xs = tap(xp, ki, kj)
                grad_w[:, :, ki, kj] = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
                spread = np.tensordot(g, w.data[:, :, ki, kj], axes=([1], [0]))
                tap(grad_xp, ki, kj)[...] += spread.transpose(0, 3, 1, 2)
        grad_x = grad_xp[:, :, pad : pad + h, pad : pad + wd] if pad else grad_xp
        grads = [grad_x, grad_w]
        if b_t is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, w) if b_t is None else (x, w, b_t)
    return _record(Tensor(out), "conv2d", parents, backward)


def batchnorm(x, gamma, beta, eps: float = 1e-5, reduce_axes: Sequence[int] = (0,)) -> Tensor:
    """Normalize over ``reduce_axes``, then scale/shift per remaining channel.

    Statistics are always the batch statistics of the given tensor (there is
    no running-average mode).  Exactly one axis must be left out of
    ``reduce_axes``; ``gamma`` and ``beta`` index that channel axis.
    """
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    if eps <= 0:
        raise ValueError(f"batchnorm: eps must be positive, got {eps}")
    axes = tuple(int(ax) % x.ndim for ax in reduce_axes)
    if len(set(axes)) != len(axes):
        raise ShapeError(f"batchnorm: repeated reduce axis in {reduce_axes}")
    channel_axes = [ax for ax in range(x.ndim) if ax not in axes]
    if len(channel_axes) != 1:
        raise ShapeError(
            f"batchnorm: reduce axes {axes} must leave exactly one channel axis "
            f"of {x.ndim}, left {channel_axes}"
        )
    channel_axis = channel_axes[0]
    c = x.shape[channel_axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"batchnorm: gamma/beta shapes {gamma.shape}/{beta.shape} != ({c},) "
            f"for channel axis {channel_axis}"
        )
    count = int(np.prod([x.shape[ax] for ax in axes]))
    if count < 2:
        raise DegenerateStatisticsError(
            f"batchnorm: statistics over a single element (reduce axes {axes} of shape {x.shape})"
        )

    m = tmean(x, axis=axes, keepdims=True)
    centered = sub(x, m)
    var = tmean(mul(centered, centered), axis=axes, keepdims=True)
    inv = power(add(var, eps), -0.5)
    normed = mul(centered, inv)
    bshape = [1] * x.ndim
    bshape[channel_axis] = c
    return add(mul(normed, reshape(gamma, bshape)), reshape(beta, bshape))
