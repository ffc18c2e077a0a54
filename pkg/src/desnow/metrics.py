"""Image quality metrics for unit-range images.

PSNR is computed over all channels and pixels against a dynamic range of 1;
identical images report +inf. SSIM is the windowed variant: 11x11 Gaussian
window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2, evaluated per channel over
valid window positions and averaged. Images smaller than the window fall
back to a single global-statistics window.

Inputs may be Tensors or plain arrays shaped (C, H, W) or (H, W);
computation is float64 throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _as_chw(img) -> np.ndarray:
    arr = img.data if isinstance(img, Tensor) else np.asarray(img)
    arr = arr.astype(np.float64, copy=False)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected (C,H,W) or (H,W) image, got shape {arr.shape}")
    return arr


def psnr(a, b) -> float:
    """10*log10(1/MSE) in dB for unit-range images; inf when identical."""
    x, y = _as_chw(a), _as_chw(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_1d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    t = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(t**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable 2-D correlation with a 1-D kernel, valid positions only."""
    win = np.lib.stride_tricks.sliding_window_view(img, k.size, axis=0)
    img = win @ k
    win = np.lib.stride_tricks.sliding_window_view(img, k.size, axis=1)
    return win @ k


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    H, W = x.shape
    if H < SSIM_WINDOW or W < SSIM_WINDOW:
        # global statistics as a single window
        mu1, mu2 = x.mean(), y.mean()
        s1, s2 = x.var(), y.var()
        s12 = ((x - mu1) * (y - mu2)).mean()
        num = (2 * mu1 * mu2 + SSIM_C1) * (2 * s12 + SSIM_C2)
        den = (mu1**2 + mu2**2 + SSIM_C1) * (s1 + s2 + SSIM_C2)
        return float(num / den)
    k = _gaussian_1d()
    mu1 = _filter_valid(x, k)
    mu2 = _filter_valid(y, k)
    mu1_sq, mu2_sq, mu12 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    s1 = _filter_valid(x * x, k) - mu1_sq
    s2 = _filter_valid(y * y, k) - mu2_sq
    s12 = _filter_valid(x * y, k) - mu12
    num = (2 * mu12 + SSIM_C1) * (2 * s12 + SSIM_C2)
    den = (mu1_sq + mu2_sq + SSIM_C1) * (s1 + s2 + SSIM_C2)
    return float(np.mean(num / den))


def ssim(a, b) -> float:
    """Mean windowed SSIM across channels; 1.0 iff the images match."""
    x, y = _as_chw(a), _as_chw(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return float(np.mean([_ssim_channel(x[c], y[c]) for c in range(x.shape[0])]))


@dataclass
class ScoreReport:
    """Per-image PSNR/SSIM pairs plus their arithmetic means."""

    psnr_values: list = field(default_factory=list)
    ssim_values: list = field(default_factory=list)

    def append(self, psnr_db: float, ssim_value: float):
        self.psnr_values.append(psnr_db)
        self.ssim_values.append(ssim_value)

    @property
    def psnr_db(self) -> float:
        return float(np.mean(self.psnr_values)) if self.psnr_values else math.nan

    @property
    def ssim(self) -> float:
        return float(np.mean(self.ssim_values)) if self.ssim_values else math.nan

    def __len__(self) -> int:
        return len(self.psnr_values)
