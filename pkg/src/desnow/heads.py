"""Prediction heads over descriptor features.

Two reductions over the same bank of parallel convolutions with kernel sizes
1, 3, ..., 2*beta-1:

* pyramid maxout: elementwise max across branches. Used by the snow-mask
  head (one channel, PReLU, clamped to [0,1]) and the snow-color head
  (three channels, PReLU, unbounded).
* pyramid sum: elementwise sum across branches. Used by the residual head,
  whose output must stay signed and zero-mean-ish.

5x5 and 7x7 branches are factorized into a 1xk convolution followed by kx1.
On maxout ties the gradient goes to the smallest participating kernel, so
backward passes are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .descriptor import ModelWeights, xavier_uniform
from .tensor import (
    Tensor,
    add,
    clamp,
    concat_channels,
    concat_first,
    conv2d,
    maximum,
    prelu,
    slice_channels,
)

PRELU_INIT_SLOPE = 0.25


@dataclass(frozen=True)
class HeadConfig:
    beta: int = 4
    se_out_channels: int = 1
    ae_out_channels: int = 3
    rg_out_channels: int = 3

    def __post_init__(self):
        if self.beta < 1:
            raise ValueError("beta must be >= 1")

    @property
    def kernel_sizes(self) -> tuple:
        return tuple(2 * i - 1 for i in range(1, self.beta + 1))


def _add_branch(weights: ModelWeights, rng, scope: str, k: int, out_ch: int, in_ch: int):
    if k <= 3:
        weights.add(f"{scope}.k{k}.w", xavier_uniform(rng, out_ch, in_ch, k, k))
        weights.add(f"{scope}.k{k}.b", np.zeros(out_ch, dtype=np.float32))
    else:
        weights.add(f"{scope}.k{k}h.w", xavier_uniform(rng, out_ch, in_ch, 1, k))
        weights.add(f"{scope}.k{k}h.b", np.zeros(out_ch, dtype=np.float32))
        weights.add(f"{scope}.k{k}v.w", xavier_uniform(rng, out_ch, out_ch, k, 1))
        weights.add(f"{scope}.k{k}v.b", np.zeros(out_ch, dtype=np.float32))


def init_heads(weights: ModelWeights, rng, in_channels_t: int, in_channels_r: int, cfg: HeadConfig):
    """Create mask/color head parameters over the first descriptor's features
    and residual head parameters over the second's."""
    for scope, out_ch in (("se", cfg.se_out_channels), ("ae", cfg.ae_out_channels)):
        for k in cfg.kernel_sizes:
            _add_branch(weights, rng, scope, k, out_ch, in_channels_t)
        weights.add(f"{scope}.slope", np.full(out_ch, PRELU_INIT_SLOPE, dtype=np.float32))
    for k in cfg.kernel_sizes:
        _add_branch(weights, rng, "rg", k, cfg.rg_out_channels, in_channels_r)


def _branch(f: Tensor, weights: ModelWeights, scope: str, k: int) -> Tensor:
    if k <= 3:
        return conv2d(f, weights[f"{scope}.k{k}.w"], weights[f"{scope}.k{k}.b"])
    h = conv2d(f, weights[f"{scope}.k{k}h.w"], weights[f"{scope}.k{k}h.b"])
    return conv2d(h, weights[f"{scope}.k{k}v.w"], weights[f"{scope}.k{k}v.b"])


def pyramid_maxout(f: Tensor, weights: ModelWeights, scope: str, out_ch: int, cfg: HeadConfig) -> Tensor:
    """Elementwise max over the kernel pyramid; ties resolve toward the
    smallest kernel because branches fold left in ascending order."""
    if out_ch <= 0:
        raise ValueError("out_ch must be positive")
    out = None
    for k in cfg.kernel_sizes:
        b = _branch(f, weights, scope, k)
        if b.data.shape[1] != out_ch:
            raise ValueError(f"{scope} branch k={k} yields {b.data.shape[1]} channels, wanted {out_ch}")
        out = b if out is None else maximum(out, b)
    return out


def pyramid_sum(f_r: Tensor, weights: ModelWeights, cfg: HeadConfig) -> Tensor:
    """Signed multi-scale residual: sum over the kernel pyramid, no
    activation and no clamping."""
    out = None
    for k in cfg.kernel_sizes:
        b = _branch(f_r, weights, "rg", k)
        out = b if out is None else add(out, b)
    return out


def se_head(f_t: Tensor, weights: ModelWeights, cfg: HeadConfig) -> Tensor:
    """Snow mask estimate: maxout -> PReLU -> clamp to [0,1], one channel."""
    m = pyramid_maxout(f_t, weights, "se", cfg.se_out_channels, cfg)
    m = prelu(m, weights["se.slope"])
    return clamp(m, 0.0, 1.0)


def ae_head(f_t: Tensor, weights: ModelWeights, cfg: HeadConfig) -> Tensor:
    """Snow color estimate: maxout -> PReLU, three channels, unbounded (the
    snow layer may legitimately be darker or tinted)."""
    m = pyramid_maxout(f_t, weights, "ae", cfg.ae_out_channels, cfg)
    return prelu(m, weights["ae.slope"])


def tr_heads(f_t: Tensor, weights: ModelWeights, cfg: HeadConfig) -> "tuple[Tensor, Tensor]":
    """Mask and color heads with the per-kernel branch convolutions fused
    (their kernels stacked along the output axis), so the shared features
    are gathered once per kernel size. Computes the same function as
    ``se_head`` and ``ae_head``; used on the hot training path."""
    n_se, n_ae = cfg.se_out_channels, cfg.ae_out_channels
    se_out = None
    ae_out = None
    for k in cfg.kernel_sizes:
        tag = f"k{k}" if k <= 3 else f"k{k}h"
        wcat = concat_first([weights[f"se.{tag}.w"], weights[f"ae.{tag}.w"]])
        bcat = concat_first([weights[f"se.{tag}.b"], weights[f"ae.{tag}.b"]])
        fused = conv2d(f_t, wcat, bcat)
        se_b = slice_channels(fused, 0, n_se)
        ae_b = slice_channels(fused, n_se, n_se + n_ae)
        if k > 3:
            se_b = conv2d(se_b, weights[f"se.k{k}v.w"], weights[f"se.k{k}v.b"])
            ae_b = conv2d(ae_b, weights[f"ae.k{k}v.w"], weights[f"ae.k{k}v.b"])
        se_out = se_b if se_out is None else maximum(se_out, se_b)
        ae_out = ae_b if ae_out is None else maximum(ae_out, ae_b)
    z_hat = clamp(prelu(se_out, weights["se.slope"]), 0.0, 1.0)
    a = prelu(ae_out, weights["ae.slope"])
    return z_hat, a


def build_fc(y_prime: Tensor, z_hat: Tensor, a: Tensor) -> Tensor:
    """Stack the recovery stage's outputs into the 7-channel input of the
    residual stage: channels 0-2 y', 3 mask, 4-6 snow color."""
    return concat_channels([y_prime, z_hat, a])
