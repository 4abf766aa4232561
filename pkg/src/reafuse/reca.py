"""Rotation-equivariant channel attention, plus the plain SE baseline.

The equivariant attention squeezes a re-feature map to per-channel
descriptors, splits them into N orientation submaps, and runs them through
two banks of cyclically weight-shared 1x1 blocks:

    CB_i^a = sum_n  W^a_{(n-i) mod N} (F_squ(n))

i.e. block i applies bank (n - i) mod N to submap n and sums.  This indexing
is the whole trick: shifting the input orientations by s re-indexes the
blocks by i -> (i - s) mod N instead of changing their values, so after
batch-norm (statistics pooled over batch x blocks, one gamma/beta per reduced
channel), relu, a second bank, and a sigmoid, the attention weights permute
together with the feature channels and the gating commutes with the group
action.

``se_forward`` is the deliberate control: an ordinary squeeze-excite whose
full channel-mixing weights ignore orientation structure and therefore break
equivariance on generic weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .groupequiv import ReFeatureMap, _uniform_init, merge_orientations, split_orientations
from .tensor import (
    Rng,
    ShapeError,
    Tensor,
    add,
    batchnorm,
    concat,
    conv2d,
    global_avg_pool,
    matmul,
    mul,
    relu,
    reshape,
    sigmoid,
    take,
    transpose,
)

__all__ = [
    "ReCAParams",
    "SEParams",
    "conv_block_a",
    "conv_block_b",
    "attention_logits",
    "reca_forward",
    "se_forward",
    "init_reca",
    "init_se",
    "default_reduction",
]


@dataclass(frozen=True)
class ReCAParams:
    """N-banked 1x1 attention weights with shared batch-norm parameters.

    ``w_a``: [N, (C/N)/r, C/N] reduction banks; ``w_b``: [N, C/N, (C/N)/r]
    expansion banks; ``bn_gamma``/``bn_beta``: [(C/N)/r], one pair shared by
    all N blocks (per-block statistics would break the shift covariance).
    """

    w_a: Tensor
    w_b: Tensor
    bn_gamma: Tensor
    bn_beta: Tensor
    r: int

    def __post_init__(self):
        if self.w_a.ndim != 3 or self.w_b.ndim != 3:
            raise ShapeError(
                f"attention banks need 3 axes, got {self.w_a.shape} and {self.w_b.shape}"
            )
        n, reduced, k = self.w_a.shape
        if self.w_b.shape != (n, k, reduced):
            raise ShapeError(
                f"expansion banks shaped {self.w_b.shape}, expected ({n}, {k}, {reduced})"
            )
        if reduced < 1 or k != reduced * self.r:
            raise ShapeError(
                f"kernel channel axis {k} must equal reduced axis {reduced} times r={self.r}"
            )
        if self.bn_gamma.shape != (reduced,) or self.bn_beta.shape != (reduced,):
            raise ShapeError(
                f"bn parameter shapes {self.bn_gamma.shape}/{self.bn_beta.shape} != ({reduced},)"
            )

    @property
    def orientations(self) -> int:
        return self.w_a.shape[0]

    @property
    def kernel_channels(self) -> int:
        return self.w_a.shape[2]

    @property
    def channels(self) -> int:
        return self.w_a.shape[0] * self.w_a.shape[2]

    @property
    def tensors(self) -> tuple[Tensor, ...]:
        return (self.w_a, self.w_b, self.bn_gamma, self.bn_beta)


@dataclass(frozen=True)
class SEParams:
    """Plain squeeze-excite weights: ``w1``: [C/r, C], ``w2``: [C, C/r]."""

    w1: Tensor
    w2: Tensor

    def __post_init__(self):
        if self.w1.ndim != 2 or self.w2.ndim != 2:
            raise ShapeError(f"SE weights need 2 axes, got {self.w1.shape} and {self.w2.shape}")
        reduced, c = self.w1.shape
        if self.w2.shape != (c, reduced):
            raise ShapeError(f"w2 shaped {self.w2.shape}, expected ({c}, {reduced})")

    @property
    def tensors(self) -> tuple[Tensor, ...]:
        return (self.w1, self.w2)


def _bank(banks: Tensor, m: int) -> Tensor:
    """Select weight matrix m from a [N, out, in] bank tensor."""
    return reshape(take(banks, [m], axis=0), banks.shape[1:])


def _apply_bank(block: Tensor, w: Tensor) -> Tensor:
    """Matrix-apply ``w``: [out, in] along the channel axis of ``block``.

    2-D blocks [B, in] use matmul; 4-D blocks [B, in, H, W] apply the same
    matrix at every spatial location (a 1x1 convolution).
    """
    if block.ndim == 2:
        return matmul(block, transpose(w, (1, 0)))
    if block.ndim == 4:
        return conv2d(block, reshape(w, w.shape + (1, 1)))
    raise ShapeError(f"blocks must have 2 or 4 axes, got {block.shape}")


def _cyclic_blocks(blocks: list[Tensor], banks: Tensor) -> list[Tensor]:
    """Block i = sum over n of bank[(n - i) mod N] applied to blocks[n]."""
    n = len(blocks)
    if banks.shape[0] != n:
        raise ShapeError(f"{banks.shape[0]} banks for {n} orientation blocks")
    mats = [_bank(banks, m) for m in range(n)]
    out = []
    for i in range(n):
        acc = _apply_bank(blocks[0], mats[(0 - i) % n])
        for m in range(1, n):
            acc = add(acc, _apply_bank(blocks[m], mats[(m - i) % n]))
        out.append(acc)
    return out


def conv_block_a(f_squ: list[Tensor], p: ReCAParams) -> list[Tensor]:
    """Reduction stage: N blocks of [B, C/N] -> [B, (C/N)/r].

    Also accepts unsqueezed [B, C/N, H, W] blocks, applying the same banks
    pointwise (the local-attention variant).
    """
    return _cyclic_blocks(f_squ, p.w_a)


def conv_block_b(cb_a: list[Tensor], p: ReCAParams) -> list[Tensor]:
    """Expansion stage: N blocks of [B, (C/N)/r] -> [B, C/N]; same indexing."""
    return _cyclic_blocks(cb_a, p.w_b)


def _shared_batchnorm(blocks: list[Tensor], gamma: Tensor, beta: Tensor) -> list[Tensor]:
    """Batch-norm with statistics pooled over batch x blocks (x spatial).

    All N blocks are normalized with the same mean/var and the same
    gamma/beta, so an orientation shift (a permutation of the blocks)
    permutes the outputs without changing any value.
    """
    b = blocks[0].shape[0]
    joined = concat(blocks, axis=0)
    axes = (0,) if joined.ndim == 2 else (0, 2, 3)
    normed = batchnorm(joined, gamma, beta, reduce_axes=axes)
    return [take(normed, range(i * b, (i + 1) * b), axis=0) for i in range(len(blocks))]


def attention_logits(x: ReFeatureMap, p: ReCAParams, squeeze: bool = True) -> ReFeatureMap:
    """Pre-sigmoid attention logits in re-feature-map channel layout.

    Pipeline: (squeeze) -> split orientations -> conv blocks a -> shared
    batch-norm -> relu -> conv blocks b -> merge orientations.  With
    ``squeeze`` the result is [B, C, 1, 1]; without it the same banks run at
    every spatial location and the result is [B, C, H, W].
    """
    if x.orientations != p.orientations or x.kernel_channels != p.kernel_channels:
        raise ShapeError(
            f"feature map ({x.kernel_channels} kernel channels, {x.orientations} "
            f"orientations) does not match params ({p.kernel_channels}, {p.orientations})"
        )
    base = x if not squeeze else ReFeatureMap(
        global_avg_pool(x.data), x.kernel_channels, x.orientations
    )
    blocks = split_orientations(base)
    blocks = conv_block_a(blocks, p)
    blocks = _shared_batchnorm(blocks, p.bn_gamma, p.bn_beta)
    blocks = [relu(t) for t in blocks]
    blocks = conv_block_b(blocks, p)
    return merge_orientations(blocks)


def reca_forward(x: ReFeatureMap, p: ReCAParams) -> ReFeatureMap:
    """Gate a re-feature map with equivariant channel attention.

    Output = x * sigmoid(logits), the [B, C, 1, 1] gates broadcasting over
    space.  Commutes with g_act; at N=1 it degenerates to a squeeze-excite
    with batch-norm.
    """
    logits = attention_logits(x, p, squeeze=True)
    gates = sigmoid(logits.data)
    return ReFeatureMap(mul(x.data, gates), x.kernel_channels, x.orientations)


def se_forward(x: Tensor, p: SEParams) -> Tensor:
    """Plain squeeze-excite: x * sigmoid(W2 relu(W1 gap(x))).

    No orientation structure and no batch-norm; the non-equivariant control.
    """
    b, c = x.shape[0], x.shape[1]
    if p.w1.shape[1] != c:
        raise ShapeError(f"SE weights expect {p.w1.shape[1]} channels, input has {c}")
    pooled = reshape(global_avg_pool(x), (b, c))
    hidden = relu(matmul(pooled, transpose(p.w1, (1, 0))))
    gates = sigmoid(matmul(hidden, transpose(p.w2, (1, 0))))
    return mul(x, reshape(gates, (b, c, 1, 1)))


def default_reduction(width: int, cap: int = 16) -> int:
    """Largest divisor of ``width`` not exceeding ``cap`` (16 by default)."""
    return max(r for r in range(1, min(cap, width) + 1) if width % r == 0)


def init_reca(rng: Rng, channels: int, n: int, r: int | None = None) -> ReCAParams:
    """Seeded He-uniform weight init; gamma=1, beta=0."""
    if channels % n:
        raise ShapeError(f"channel count {channels} not divisible by {n} orientations")
    k = channels // n
    if r is None:
        r = default_reduction(k)
    if r < 1 or k % r:
        raise ShapeError(f"kernel channel axis {k} not divisible by reduction r={r}")
    reduced = k // r
    return ReCAParams(
        w_a=_uniform_init(rng, (n, reduced, k), n * k),
        w_b=_uniform_init(rng, (n, k, reduced), n * reduced),
        bn_gamma=Tensor(np.ones(reduced), requires_grad=True),
        bn_beta=Tensor(np.zeros(reduced), requires_grad=True),
        r=r,
    )


def init_se(rng: Rng, channels: int, r: int | None = None) -> SEParams:
    if r is None:
        r = default_reduction(channels)
    if r < 1 or channels % r:
        raise ShapeError(f"channel count {channels} not divisible by reduction r={r}")
    reduced = channels // r
    return SEParams(
        w1=_uniform_init(rng, (reduced, channels), channels),
        w2=_uniform_init(rng, (channels, reduced), reduced),
    )
