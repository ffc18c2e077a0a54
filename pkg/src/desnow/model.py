"""Full two-stage model: assembly, initialization and the composed forward.

Stage one runs the snowy image through the first descriptor and predicts the
snow mask and snow color, then recovers the translucent regions in closed
form. Stage two stacks the recovered image, mask and color into a 7-channel
map, runs the second descriptor, and predicts a signed residual that repairs
what recovery could not see (opaque snow). The final output is their sum,
clipped to [0,1] only at inference.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .descriptor import DescriptorConfig, ModelWeights, descriptor_forward, init_descriptor
from .heads import HeadConfig, build_fc, init_heads, pyramid_sum, tr_heads
from .rng import stream
from .snow import DEFAULT_EPS, combine, recover_translucency
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    dt: DescriptorConfig = field(
        default_factory=lambda: DescriptorConfig(in_channels=3, dp_branch_channels=16)
    )
    dr: DescriptorConfig = field(
        default_factory=lambda: DescriptorConfig(in_channels=7, dp_branch_channels=8)
    )
    heads: HeadConfig = field(default_factory=HeadConfig)
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if self.dt.in_channels != 3:
            raise ValueError("first-stage descriptor must take 3 channels")
        if self.dr.in_channels != 7:
            raise ValueError("second-stage descriptor must take 7 channels")


def init_model(cfg: ModelConfig, seed: int) -> ModelWeights:
    """Fresh weights: Xavier-uniform kernels, zero biases, 0.25 PReLU slopes.
    Parameter order (and therefore checkpoint layout) is fixed by this
    function."""
    rng = stream(seed, "init")
    w = ModelWeights()
    init_descriptor(w, rng, cfg.dt, "t")
    init_descriptor(w, rng, cfg.dr, "r")
    init_heads(w, rng, cfg.dt.out_channels, cfg.dr.out_channels, cfg.heads)
    return w


def forward_full(x: Tensor, weights: ModelWeights, cfg: ModelConfig, mode: str = "train"):
    """Run both stages; returns (z_hat, a, y_prime, r, y_hat).

    ``mode`` controls only the final clipping: "infer" clamps the output to
    [0,1], "train" leaves it raw.
    """
    f_t = descriptor_forward(x, weights, cfg.dt, "t")
    z_hat, a = tr_heads(f_t, weights, cfg.heads)
    y_prime = recover_translucency(x, z_hat, a, cfg.eps)
    f_c = build_fc(y_prime, z_hat, a)
    f_r = descriptor_forward(f_c, weights, cfg.dr, "r")
    r = pyramid_sum(f_r, weights, cfg.heads)
    y_hat = combine(y_prime, r, mode)
    return z_hat, a, y_prime, r, y_hat


def config_from_weights(weights: ModelWeights) -> ModelConfig:
    """Reconstruct the architecture from parameter names and shapes, so a
    checkpoint alone is enough to run inference."""

    def descriptor_cfg(scope: str) -> DescriptorConfig:
        blocks = 0
        while f"phi_{scope}.block{blocks}.b1x1.w" in weights:
            blocks += 1
        if blocks == 0:
            raise ValueError(f"checkpoint has no phi_{scope} backbone")
        first = weights[f"phi_{scope}.block0.b1x1.w"].data.shape
        proj = weights[f"phi_{scope}.block0.proj.w"].data.shape
        dils = sorted(
            int(m.group(1))
            for n in weights.names()
            if (m := re.fullmatch(rf"dp_{scope}\.d(\d+)\.w", n))
        )
        if not dils or dils != [2**n for n in range(len(dils))]:
            raise ValueError(f"checkpoint has a malformed dp_{scope} pyramid")
        width = proj[0]
        branch = first[0] if first[0] != max(width // 4, 4) else None
        return DescriptorConfig(
            in_channels=first[1],
            backbone_blocks=blocks,
            backbone_width=width,
            gamma=len(dils) - 1,
            dp_branch_channels=weights[f"dp_{scope}.d1.w"].data.shape[0],
            branch_channels=branch,
        )

    ks = sorted(
        int(m.group(1))
        for n in weights.names()
        if (m := re.fullmatch(r"se\.k(\d+)h?\.w", n))
    )
    if not ks or ks != [2 * i - 1 for i in range(1, len(ks) + 1)]:
        raise ValueError("checkpoint has a malformed mask-head kernel pyramid")
    return ModelConfig(
        dt=descriptor_cfg("t"),
        dr=descriptor_cfg("r"),
        heads=HeadConfig(beta=len(ks)),
    )
