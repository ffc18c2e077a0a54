"""Closed-form snow algebra.

A snowy image decomposes as ``x = a*z + y*(1-z)`` where ``y`` is the clean
image, ``z`` a single-channel translucency mask in [0,1] and ``a`` a
per-channel snow color map. ``compose`` builds x, ``recover_translucency``
inverts the relation where snow is not fully opaque, and ``combine`` adds the
learned residual on top (clipped only at inference).

Ops accept (C,H,W) or (B,C,H,W) tensors; the mask has one channel and is
applied to all color channels of the same pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _acc, _make, _recording, add, clamp

DEFAULT_EPS = 1e-3


@dataclass
class SnowTriplet:
    """One synthetic sample: snowy input, clean truth, mask, snow color."""

    x: np.ndarray  # (3, H, W) in [0, 1]
    y: np.ndarray  # (3, H, W) in [0, 1]
    z: np.ndarray  # (1, H, W) in [0, 1]
    a: np.ndarray  # (3, H, W)


@dataclass
class RecoveryOutput:
    y_prime: Tensor
    r: Tensor
    y_hat: Tensor


def _check_mask_shapes(img: Tensor, z: Tensor, name: str):
    if img.data.ndim not in (3, 4) or z.data.ndim != img.data.ndim:
        raise ValueError(f"{name}: expected matching (B)CHW ranks")
    if z.data.shape[-3] != 1:
        raise ValueError(f"{name}: mask must have a single channel")
    if img.data.shape[-2:] != z.data.shape[-2:] or img.data.shape[:-3] != z.data.shape[:-3]:
        raise ValueError(
            f"{name}: shape mismatch {img.data.shape} vs mask {z.data.shape}"
        )
    if img.data.dtype != z.data.dtype:
        raise ValueError(f"{name}: dtype mismatch {img.data.dtype} vs {z.data.dtype}")


def compose(y: Tensor, z: Tensor, a: Tensor) -> Tensor:
    """Overlay snow: ``x = a*z + y*(1-z)``, mask broadcast over channels."""
    _check_mask_shapes(y, z, "compose")
    if a.data.shape != y.data.shape:
        raise ValueError(f"compose: aberration shape {a.data.shape} != image {y.data.shape}")
    if z.data.min() < 0 or z.data.max() > 1:
        raise ValueError("compose: mask values must lie in [0, 1]")
    zd = z.data
    data = a.data * zd + y.data * (1 - zd)
    if not _recording(y, z, a):
        return Tensor(data)

    def bw(g):
        _acc(y, g * (1 - zd), owned=True)
        _acc(a, g * zd, owned=True)
        _acc(z, (g * (a.data - y.data)).sum(axis=-3, keepdims=True), owned=True)

    return _make(data, (y, z, a), bw)


def recover_translucency(x: Tensor, z_hat: Tensor, a: Tensor, eps: float = DEFAULT_EPS) -> Tensor:
    """Undo the snow overlay where it is not opaque.

    Per pixel: ``y' = (x - a*z) / (1 - z)`` where ``z < 1 - eps``, and
    ``y' = x`` where the mask is (numerically) fully opaque. The denominator
    is additionally floored at ``eps`` so a mask arbitrarily close to the
    branch cut cannot blow up. The branch selection itself carries no
    gradient; within the translucent branch the op differentiates w.r.t.
    all three inputs.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    _check_mask_shapes(x, z_hat, "recover_translucency")
    if a.data.shape != x.data.shape:
        raise ValueError(
            f"recover_translucency: aberration shape {a.data.shape} != image {x.data.shape}"
        )
    zd = z_hat.data
    opaque = zd >= 1.0 - eps
    denom = np.maximum(1.0 - zd, eps)
    numer = x.data - a.data * zd
    data = np.where(opaque, x.data, numer / denom)
    if not _recording(x, z_hat, a):
        return Tensor(data)
    translucent = ~opaque

    def bw(g):
        gt = g * translucent
        _acc(x, np.where(opaque, g, g / denom), owned=True)
        _acc(a, -gt * zd / denom, owned=True)
        # d/dz[(x - a*z)/denom]; the floor freezes the denominator once active
        live = (1.0 - zd) > eps
        gz = gt * (-a.data * denom + numer * live) / (denom * denom)
        _acc(z_hat, gz.sum(axis=-3, keepdims=True), owned=True)

    return _make(data, (x, z_hat, a), bw)


def combine(y_prime: Tensor, r: Tensor, mode: str) -> Tensor:
    """Final output ``y' + r``; clamped to [0,1] at inference, raw in training."""
    if mode not in ("train", "infer"):
        raise ValueError(f"combine: unknown mode {mode!r}")
    if y_prime.data.shape != r.data.shape:
        raise ValueError(f"combine: shape mismatch {y_prime.data.shape} vs {r.data.shape}")
    out = add(y_prime, r)
    if mode == "infer":
        out = clamp(out, 0.0, 1.0)
    return out
