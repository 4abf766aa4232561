"""Feature-pyramid assembly over a toy equivariant backbone.

Five wiring variants share one skeleton -- lateral 1x1 group convolutions,
top-down nearest-neighbour upsampling, and a 3x3 smoothing group convolution
after each merge -- and differ only in how the upper feature is treated
before fusing with the lower one:

=========  ==========================  =======================
variant    upper-feature attention     fusion
=========  ==========================  =======================
Baseline   none                        elementwise add
PlusSE     squeeze-excite (plain)      elementwise add
PlusReCA   equivariant channel att.    elementwise add
PlusIAFF   none                        two-stage plain fusion
ReAFFPN    none                        two-stage equiv. fusion
=========  ==========================  =======================

Baseline, PlusReCA, and ReAFFPN are exactly rotation-equivariant end to end;
PlusSE and PlusIAFF break equivariance on generic weights.  That five-way
contrast is the main thing the verification harness measures.

The backbone is deliberately tiny (one lifting convolution, then two 3x3
group convolutions per level with a relu between them and stride-2
transitions): deep enough to exercise every op, small enough for
seconds-scale property tests.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .groupequiv import (
    GroupConvParams,
    LiftConvParams,
    ReFeatureMap,
    group_conv,
    init_group_conv,
    init_lift_conv,
    lift_conv,
)
from .reaff import (
    PlainIAFFParams,
    ReAFFParams,
    init_plain_iaff,
    init_reaff,
    plain_iaff_forward,
    reaff_forward,
)
from .reca import (
    ReCAParams,
    SEParams,
    default_reduction,
    init_reca,
    init_se,
    reca_forward,
    se_forward,
)
from .tensor import Rng, ShapeError, Tensor, add, relu, upsample_nearest2x

__all__ = [
    "VARIANTS",
    "EQUIVARIANT_VARIANTS",
    "PyramidConfig",
    "PyramidParams",
    "init_pyramid",
    "toy_backbone",
    "build_pyramid",
    "run_pyramid",
    "named_parameters",
]

VARIANTS = ("Baseline", "PlusSE", "PlusReCA", "PlusIAFF", "ReAFFPN")
EQUIVARIANT_VARIANTS = ("Baseline", "PlusReCA", "ReAFFPN")


@dataclass(frozen=True)
class PyramidConfig:
    """Build-time knobs: every width is K kernel channels x N orientations."""

    levels: int = 4
    kernel_channels: int = 8
    orientations: int = 4
    reduction: int | None = None
    variant: str = "ReAFFPN"
    seed: int = 0

    def __post_init__(self):
        if self.levels < 2:
            raise ShapeError(f"a pyramid needs at least 2 levels, got {self.levels}")
        if self.orientations not in (1, 2, 4):
            raise ShapeError(f"orientation count {self.orientations} not in (1, 2, 4)")
        if self.kernel_channels < 1:
            raise ShapeError(f"kernel channel count must be positive, got {self.kernel_channels}")
        if self.variant not in VARIANTS:
            raise ShapeError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if not 0 <= self.seed < 2**64:
            raise ShapeError(f"seed {self.seed} does not fit in u64")

    @property
    def channels(self) -> int:
        return self.kernel_channels * self.orientations


@dataclass(frozen=True)
class PyramidParams:
    """All weights of one configured pyramid.

    ``stages[l]`` holds the two 3x3 group convolutions of backbone level l
    (the first runs at stride 2 for l > 0).  ``lateral``/``smooth`` are the
    per-level 1x1 and 3x3 pyramid convolutions; ``smooth`` has one entry per
    *fused* level (the coarsest level is never smoothed).  ``attention``
    likewise has one entry per fused level and its type depends on the
    variant: None for Baseline, SEParams, ReCAParams, PlainIAFFParams, or
    ReAFFParams.
    """

    config: PyramidConfig
    stem: LiftConvParams
    stages: tuple[tuple[GroupConvParams, GroupConvParams], ...]
    lateral: tuple[GroupConvParams, ...]
    smooth: tuple[GroupConvParams, ...]
    attention: tuple

    def __post_init__(self):
        L = self.config.levels
        if not (len(self.stages) == len(self.lateral) == L):
            raise ShapeError(f"expected {L} backbone stages and laterals")
        if not (len(self.smooth) == len(self.attention) == L - 1):
            raise ShapeError(f"expected {L - 1} smooth convolutions and attention entries")


def init_pyramid(config: PyramidConfig, in_channels: int = 3) -> PyramidParams:
    """Seeded parameter construction; every layer gets a derived rng stream."""
    rng = Rng(config.seed)
    k, n, c, r = config.kernel_channels, config.orientations, config.channels, config.reduction
    stages = tuple(
        (
            init_group_conv(rng.derive(f"stage{l}.conv0"), k, k, n, 3),
            init_group_conv(rng.derive(f"stage{l}.conv1"), k, k, n, 3),
        )
        for l in range(config.levels)
    )
    lateral = tuple(
        init_group_conv(rng.derive(f"lateral{l}"), k, k, n, 1) for l in range(config.levels)
    )
    smooth = tuple(
        init_group_conv(rng.derive(f"smooth{l}"), k, k, n, 3) for l in range(config.levels - 1)
    )
    attention: list = []
    for l in range(config.levels - 1):
        arng = rng.derive(f"attention{l}")
        if config.variant == "PlusSE":
            attention.append(init_se(arng, c, r))
        elif config.variant == "PlusReCA":
            attention.append(init_reca(arng, c, n, r))
        elif config.variant == "PlusIAFF":
            attention.append(init_plain_iaff(arng, c, r if r is not None else default_reduction(c)))
        elif config.variant == "ReAFFPN":
            attention.append(init_reaff(arng, c, n, r))
        else:
            attention.append(None)
    return PyramidParams(
        config=config,
        stem=init_lift_conv(rng.derive("stem"), k, in_channels, 3),
        stages=stages,
        lateral=lateral,
        smooth=smooth,
        attention=tuple(attention),
    )


def toy_backbone(x: Tensor, params: PyramidParams) -> list[ReFeatureMap]:
    """Bottom-up features, finest first; level l has spatial extent H / 2^l.

    Requires a square input whose side is divisible by 2^(levels-1), so every
    stride-2 transition sees even extents (the exact-equivariance condition
    for block-averaged downsampling).
    """
    cfg = params.config
    if x.ndim != 4:
        raise ShapeError(f"backbone input needs 4 axes, got {x.shape}")
    h, w = x.shape[2], x.shape[3]
    if h != w:
        raise ShapeError(f"backbone input must be square, got {h}x{w}")
    factor = 2 ** (cfg.levels - 1)
    if h % factor:
        raise ShapeError(
            f"spatial size not divisible: input side {h} must be a multiple of "
            f"2^(levels-1) = {factor}"
        )
    f = lift_conv(x, params.stem, cfg.orientations)
    feats = []
    for l, (conv0, conv1) in enumerate(params.stages):
        f = group_conv(f, conv0, stride=2 if l > 0 else 1)
        f = ReFeatureMap(relu(f.data), f.kernel_channels, f.orientations)
        f = group_conv(f, conv1, stride=1)
        feats.append(f)
    return feats


def build_pyramid(feats: list[ReFeatureMap], params: PyramidParams) -> list[ReFeatureMap]:
    """Top-down merge of backbone features into pyramid levels, finest first.

    The coarsest level is its lateral projection; every other level fuses
    its lateral with the (attended, upsampled) level above and is then
    smoothed by a 3x3 group convolution.
    """
    cfg = params.config
    if len(feats) != cfg.levels:
        raise ShapeError(f"got {len(feats)} feature maps for {cfg.levels} levels")
    laterals = [group_conv(f, params.lateral[l]) for l, f in enumerate(feats)]
    pyramid: list[ReFeatureMap | None] = [None] * cfg.levels
    pyramid[-1] = laterals[-1]
    for l in range(cfg.levels - 2, -1, -1):
        upper, att = pyramid[l + 1], params.attention[l]
        if cfg.variant == "PlusSE":
            upper = _like(upper, se_forward(upper.data, att))
        elif cfg.variant == "PlusReCA":
            upper = reca_forward(upper, att)
        up = _like(upper, upsample_nearest2x(upper.data))
        low = laterals[l]
        if cfg.variant == "PlusIAFF":
            fused = _like(low, plain_iaff_forward(low.data, up.data, att))
        elif cfg.variant == "ReAFFPN":
            fused = reaff_forward(low, up, att)
        else:
            fused = _like(low, add(low.data, up.data))
        pyramid[l] = group_conv(fused, params.smooth[l])
    return pyramid


def run_pyramid(image: Tensor, params: PyramidParams) -> list[ReFeatureMap]:
    """Full forward pass: image -> backbone -> pyramid levels."""
    return build_pyramid(toy_backbone(image, params), params)


def _like(reference: ReFeatureMap, data: Tensor) -> ReFeatureMap:
    return ReFeatureMap(data, reference.kernel_channels, reference.orientations)


def named_parameters(obj, prefix: str = "params") -> list[tuple[str, Tensor]]:
    """Flatten any nested parameter dataclass into (dotted-name, tensor) pairs.

    Walks dataclass fields and tuples/lists in declaration order, so the
    listing is deterministic and usable as a serialization manifest.
    """
    out: list[tuple[str, Tensor]] = []

    def walk(name, value):
        if isinstance(value, Tensor):
            out.append((name, value))
        elif dataclasses.is_dataclass(value) and not isinstance(value, type):
            for f in dataclasses.fields(value):
                walk(f"{name}.{f.name}", getattr(value, f.name))
        elif isinstance(value, (tuple, list)):
            for i, item in enumerate(value):
                walk(f"{name}[{i}]", item)

    walk(prefix, obj)
    return out
