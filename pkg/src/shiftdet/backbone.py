"""Convolutional feature extractor over folded clip frames.

A clip arrives as [K,3,H,W] with the K sampled frames folded into the
batch dimension, so every op here is plain 2D; temporal context enters
only through the shift applied on each residual branch.

Layout: a stride-1 stem conv, then one stage per entry of
`stage_channels`. Each stage halves the spatial extent with a 2x2 max
pool (odd extents are padded with -inf so the output is ceil(in/2)),
widens channels with a transition conv when needed, and runs its
residual blocks: shift -> conv-affine-relu -> conv-affine, added back
onto the unshifted identity path, then relu. Affine layers stand in for
frozen normalization (scale 1, shift 0, never trained).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ContractError
from .nn import ParamStore, Tensor
from .shift import ShiftConfig, temporal_shift


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 3
    stage_channels: tuple = (16, 32, 64)
    blocks_per_stage: tuple = (1, 1, 1)
    shift: ShiftConfig = field(default_factory=ShiftConfig)

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(self.stage_channels))
        object.__setattr__(self, "blocks_per_stage", tuple(self.blocks_per_stage))
        if len(self.stage_channels) != len(self.blocks_per_stage):
            raise ContractError(
                f"{len(self.stage_channels)} stage widths vs "
                f"{len(self.blocks_per_stage)} block counts"
            )
        if not self.stage_channels:
            raise ContractError("backbone needs at least one stage")
        if any(c <= 0 for c in self.stage_channels) or any(
            b < 0 for b in self.blocks_per_stage
        ):
            raise ContractError("stage widths must be positive, block counts >= 0")
        for c in self.stage_channels:
            self.shift.fold(c)  # raises if the fraction is not integral here

    @property
    def total_stride(self) -> int:
        """One 2x pool per stage."""
        return 2 ** len(self.stage_channels)

    @property
    def out_channels(self) -> int:
        return self.stage_channels[-1]

    @property
    def num_shift_blocks(self) -> int:
        return int(sum(self.blocks_per_stage))


def param_specs(cfg: BackboneConfig) -> list:
    """(name, shape, kind) for every backbone parameter, in layer order.

    kind is one of conv_w / bias / affine_scale / affine_shift; affine
    parameters are frozen.
    """
    specs = []

    def conv(name, cin, cout, k):
        specs.append((f"{name}.w", (cout, cin, k, k), "conv_w"))
        specs.append((f"{name}.b", (cout,), "bias"))

    def affine(name, c):
        specs.append((f"{name}.scale", (c,), "affine_scale"))
        specs.append((f"{name}.shift", (c,), "affine_shift"))

    c0 = cfg.stage_channels[0]
    conv("stem.conv", cfg.in_channels, c0, 3)
    affine("stem.affine", c0)
    prev = c0
    for s, (width, blocks) in enumerate(zip(cfg.stage_channels, cfg.blocks_per_stage)):
        if width != prev:
            conv(f"stage{s}.trans.conv", prev, width, 3)
            affine(f"stage{s}.trans.affine", width)
        for i in range(blocks):
            conv(f"stage{s}.block{i}.conv1", width, width, 3)
            affine(f"stage{s}.block{i}.affine1", width)
            conv(f"stage{s}.block{i}.conv2", width, width, 3)
            affine(f"stage{s}.block{i}.affine2", width)
        prev = width
    return specs


def init_param(shape, kind, rng: np.random.Generator, dtype=np.float32) -> Tensor:
    """He fan-in init for conv weights; biases 0; affine identity (frozen).

    Final predictor layers (kinds cls_w / reg_w) use small fixed-std
    Gaussians instead of He: scores start near-uniform and box deltas
    near zero, which keeps the first optimizer steps from being spent
    unlearning a large random head.

    Classification biases (rpn_cls_b / head_cls_b) start at the log-odds
    of the label base rates the samplers produce, so gradient descent can
    put its limited steps into separating classes instead of first
    learning that background dominates.
    """
    if kind == "conv_w":
        fan_in = int(np.prod(shape[1:]))
        data = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        return Tensor(data.astype(dtype), requires_grad=True)
    if kind == "linear_w":
        fan_in = shape[1]
        data = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        return Tensor(data.astype(dtype), requires_grad=True)
    if kind == "cls_w":
        return Tensor(rng.normal(0.0, 0.01, size=shape).astype(dtype),
                      requires_grad=True)
    if kind == "reg_w":
        return Tensor(rng.normal(0.0, 0.001, size=shape).astype(dtype),
                      requires_grad=True)
    if kind == "rpn_cls_b":
        # (background, action) per anchor: start at roughly the anchor
        # base rates so early steps train discrimination, not calibration
        data = np.tile([1.0, -1.0], shape[0] // 2)
        return Tensor(data.astype(dtype), requires_grad=True)
    if kind == "head_cls_b":
        # softmax over (background, classes): start at the 3:1 roi
        # sampling prior split evenly over the real classes
        gap = 0.5 * np.log(3.0 * (shape[0] - 1))
        data = np.full(shape, -gap)
        data[0] = gap
        return Tensor(data.astype(dtype), requires_grad=True)
    if kind == "bias":
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)
    if kind == "affine_scale":
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=False)
    if kind == "affine_shift":
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=False)
    raise ContractError(f"unknown parameter kind {kind!r}")


def _pool_half(x: Tensor) -> Tensor:
    """2x2 stride-2 max pool producing ceil(H/2) x ceil(W/2)."""
    H, W = x.shape[2], x.shape[3]
    x = nn.pad2d(x, bottom=H % 2, right=W % 2, value=-np.inf)
    return nn.max_pool2d(x, k=2, stride=2)


def _conv_affine(x: Tensor, store: ParamStore, name: str, cname: str = "conv",
                 aname: str = "affine") -> Tensor:
    x = nn.conv2d(x, store[f"{name}.{cname}.w"], store[f"{name}.{cname}.b"],
                  stride=1, padding=1)
    return nn.frozen_affine(x, store[f"{name}.{aname}.scale"], store[f"{name}.{aname}.shift"])


def _residual_block(x: Tensor, store: ParamStore, name: str, cfg: BackboneConfig) -> Tensor:
    if cfg.shift.on_residual and cfg.shift.shift_fraction != 0:
        r = temporal_shift(x, cfg.shift)
    else:
        r = x
    r = nn.relu(_conv_affine(r, store, name, "conv1", "affine1"))
    r = _conv_affine(r, store, name, "conv2", "affine2")
    return nn.relu(nn.add(x, r))


def extract_features(frames: Tensor, store: ParamStore, cfg: BackboneConfig) -> Tensor:
    """[K,in_channels,H,W] -> [K,out_channels,ceil(H/s),ceil(W/s)]."""
    if frames.data.ndim != 4 or frames.data.shape[1] != cfg.in_channels:
        raise ContractError(
            f"expected [K,{cfg.in_channels},H,W] frames, got {frames.data.shape}"
        )
    if frames.data.shape[0] != cfg.shift.num_frames:
        raise ContractError(
            f"clip has {frames.data.shape[0]} frames, config expects "
            f"{cfg.shift.num_frames}"
        )
    x = nn.relu(_conv_affine(frames, store, "stem"))
    prev = cfg.stage_channels[0]
    for s, (width, blocks) in enumerate(zip(cfg.stage_channels, cfg.blocks_per_stage)):
        x = _pool_half(x)
        if width != prev:
            x = nn.relu(_conv_affine(x, store, f"stage{s}.trans"))
        for i in range(blocks):
            x = _residual_block(x, store, f"stage{s}.block{i}", cfg)
        prev = width
    return x
