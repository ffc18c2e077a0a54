"""Multi-scale squared-error losses.

The pyramid loss compares two maps at several scales: level i max-pools both
with non-overlapping 2^i windows (level 0 is the identity) and adds the sum
of squared differences. The overall training loss combines the pyramid
losses of the recovered image, the final output and the snow mask (the mask
term carries its own weight) plus l2 regularization over convolution
kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

from .descriptor import ModelWeights
from .tensor import Tensor, add, maxpool2d, mul, sub


@dataclass(frozen=True)
class LossConfig:
    tau: int = 2
    lambda_z: float = 3.0
    lambda_w: float = 5e-4

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.lambda_z < 0 or self.lambda_w < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass
class LossBreakdown:
    """Scalar terms of one evaluation; total = l_y_prime + l_y_hat
    + lambda_z*l_z + lambda_w*l_reg."""

    l_y_prime: float
    l_y_hat: float
    l_z: float
    l_reg: float
    total: float


def pyramid_loss(m: Tensor, m_hat: Tensor, tau: int) -> Tensor:
    """Sum over levels 0..tau of the squared error between max-pooled maps.

    Pooling at level i uses kernel = stride = 2^i without padding; trailing
    rows/columns that do not fill a window are dropped.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if m.data.shape != m_hat.data.shape:
        raise ValueError(f"shape mismatch: {m.data.shape} vs {m_hat.data.shape}")
    total = None
    for i in range(tau + 1):
        k = 2**i
        pa = m if k == 1 else maxpool2d(m, k, k)
        pb = m_hat if k == 1 else maxpool2d(m_hat, k, k)
        d = sub(pa, pb)
        term = mul(d, d).sum()
        total = term if total is None else add(total, term)
    return total


def regularization(weights: ModelWeights) -> Tensor:
    """Sum of squared convolution kernel entries; biases and PReLU slopes are
    exempt."""
    total = None
    for _, w in weights.kernel_items():
        term = mul(w, w).sum()
        total = term if total is None else add(total, term)
    if total is None:
        raise ValueError("no kernel parameters registered")
    return total


def overall_loss(
    y: Tensor,
    y_prime: Tensor,
    y_hat_train: Tensor,
    z: Tensor,
    z_hat: Tensor,
    weights: ModelWeights,
    cfg: LossConfig,
) -> "tuple[Tensor, LossBreakdown]":
    """Weighted training loss; ``y_hat_train`` must be the unclipped sum.

    Returns the scalar graph tensor (for backward) and a float breakdown of
    the individual terms.
    """
    l_yp = pyramid_loss(y, y_prime, cfg.tau)
    l_yh = pyramid_loss(y, y_hat_train, cfg.tau)
    l_z = pyramid_loss(z, z_hat, cfg.tau)
    l_reg = regularization(weights)
    total = add(add(l_yp, l_yh), add(mul(l_z, cfg.lambda_z), mul(l_reg, cfg.lambda_w)))
    breakdown = LossBreakdown(
        l_y_prime=l_yp.item(),
        l_y_hat=l_yh.item(),
        l_z=l_z.item(),
        l_reg=l_reg.item(),
        total=total.item(),
    )
    return total, breakdown
