"""Shared multi-scale feature extractor: backbone followed by a dilation
pyramid.

The backbone is a small stack of stride-1 multi-branch blocks (1x1, 3x3,
separable 5x5 and max-pool branches, concatenated and projected back by a
1x1 convolution), so spatial resolution is never reduced. The dilation
pyramid then applies parallel 3x3 convolutions with dilation factors
1, 2, 4, ..., 2**gamma to the backbone features and concatenates them in
ascending-dilation order: slab ``n`` of the output always corresponds to
dilation ``2**n``.

Two descriptor instances exist in the full model: one over the snowy image
(prefixes ``phi_t``/``dp_t``) and one over the 7-channel recovery stack
(prefixes ``phi_r``/``dp_r``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import serialize
from .tensor import Tensor, concat_channels, conv2d, maxpool2d


@dataclass(frozen=True)
class DescriptorConfig:
    in_channels: int
    backbone_blocks: int = 3
    backbone_width: int = 32
    gamma: int = 4
    dp_branch_channels: int = 16
    branch_channels: Optional[int] = None  # per-branch width inside a block

    def __post_init__(self):
        if self.in_channels < 1 or self.backbone_blocks < 1 or self.backbone_width < 1:
            raise ValueError("descriptor dims must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.dp_branch_channels < 1:
            raise ValueError("dp_branch_channels must be positive")

    @property
    def block_branch_channels(self) -> int:
        if self.branch_channels is not None:
            return self.branch_channels
        return max(self.backbone_width // 4, 4)

    @property
    def dilations(self) -> tuple:
        return tuple(2**n for n in range(self.gamma + 1))

    @property
    def out_channels(self) -> int:
        return (self.gamma + 1) * self.dp_branch_channels


class ModelWeights:
    """Ordered name -> parameter map for the whole network.

    Names follow ``<scope>.<layer>.<w|b|slope>``; ``.w`` entries are
    convolution kernels (the ones weight decay applies to), ``.b`` biases and
    ``.slope`` PReLU slopes. Iteration order is insertion order and survives
    checkpoint round trips byte for byte.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.ascontiguousarray(array, dtype=np.float32), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list:
        return list(self._params)

    def items(self) -> Iterator:
        return iter(self._params.items())

    def parameters(self) -> Iterator[Tensor]:
        return iter(self._params.values())

    def kernel_items(self) -> Iterator:
        return ((n, t) for n, t in self._params.items() if n.endswith(".w"))

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def save(self, path):
        serialize.save_weights(path, [(n, t.data) for n, t in self._params.items()])

    @classmethod
    def load(cls, path) -> "ModelWeights":
        w = cls()
        for name, arr in serialize.load_weights(path).items():
            w.add(name, arr)
        return w


def xavier_uniform(rng: np.random.Generator, out_ch: int, in_ch: int, kh: int, kw: int) -> np.ndarray:
    """Uniform Xavier draw for a convolution kernel; fans count the full
    kernel footprint (in_ch*kh*kw and out_ch*kh*kw)."""
    fan_in = in_ch * kh * kw
    fan_out = out_ch * kh * kw
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(out_ch, in_ch, kh, kw)).astype(np.float32)


def _add_conv(weights: ModelWeights, rng, name: str, out_ch: int, in_ch: int, kh: int, kw: int):
    weights.add(f"{name}.w", xavier_uniform(rng, out_ch, in_ch, kh, kw))
    weights.add(f"{name}.b", np.zeros(out_ch, dtype=np.float32))


def init_descriptor(weights: ModelWeights, rng: np.random.Generator, cfg: DescriptorConfig, scope: str):
    """Create all backbone and pyramid parameters for one descriptor.

    ``scope`` is ``t`` or ``r``; parameters land under ``phi_<scope>`` and
    ``dp_<scope>``.
    """
    bc = cfg.block_branch_channels
    in_ch = cfg.in_channels
    for i in range(cfg.backbone_blocks):
        base = f"phi_{scope}.block{i}"
        _add_conv(weights, rng, f"{base}.b1x1", bc, in_ch, 1, 1)
        _add_conv(weights, rng, f"{base}.b3x3", bc, in_ch, 3, 3)
        _add_conv(weights, rng, f"{base}.b5h", bc, in_ch, 1, 5)
        _add_conv(weights, rng, f"{base}.b5v", bc, bc, 5, 1)
        _add_conv(weights, rng, f"{base}.bpool", bc, in_ch, 1, 1)
        _add_conv(weights, rng, f"{base}.proj", cfg.backbone_width, 4 * bc, 1, 1)
        in_ch = cfg.backbone_width
    for d in cfg.dilations:
        _add_conv(weights, rng, f"dp_{scope}.d{d}", cfg.dp_branch_channels, cfg.backbone_width, 3, 3)


def backbone_forward(x: Tensor, weights: ModelWeights, cfg: DescriptorConfig, scope: str) -> Tensor:
    """Run the stride-1 multi-branch backbone; output keeps H and W and has
    ``cfg.backbone_width`` channels."""
    if x.data.shape[1] != cfg.in_channels:
        raise ValueError(
            f"backbone expects {cfg.in_channels} input channels, got {x.data.shape[1]}"
        )
    h = x
    for i in range(cfg.backbone_blocks):
        base = f"phi_{scope}.block{i}"
        b1 = conv2d(h, weights[f"{base}.b1x1.w"], weights[f"{base}.b1x1.b"], activation="relu")
        b2 = conv2d(h, weights[f"{base}.b3x3.w"], weights[f"{base}.b3x3.b"], activation="relu")
        s = conv2d(h, weights[f"{base}.b5h.w"], weights[f"{base}.b5h.b"])
        b3 = conv2d(s, weights[f"{base}.b5v.w"], weights[f"{base}.b5v.b"], activation="relu")
        p = maxpool2d(h, 3, 1)
        b4 = conv2d(p, weights[f"{base}.bpool.w"], weights[f"{base}.bpool.b"], activation="relu")
        merged = concat_channels([b1, b2, b3, b4])
        h = conv2d(merged, weights[f"{base}.proj.w"], weights[f"{base}.proj.b"], activation="relu")
    return h


def dilation_pyramid(phi: Tensor, weights: ModelWeights, cfg: DescriptorConfig, scope: str) -> Tensor:
    """Concatenate dilated 3x3 convolutions of the backbone features, one
    slab of ``dp_branch_channels`` per dilation, ascending."""
    parts = []
    for d in cfg.dilations:
        parts.append(
            conv2d(phi, weights[f"dp_{scope}.d{d}.w"], weights[f"dp_{scope}.d{d}.b"], dilation=d)
        )
    return concat_channels(parts)


def descriptor_forward(x: Tensor, weights: ModelWeights, cfg: DescriptorConfig, scope: str) -> Tensor:
    return dilation_pyramid(backbone_forward(x, weights, cfg, scope), weights, cfg, scope)
