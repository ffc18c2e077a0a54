"""PSNR/SSIM against closed-form values and a brute-force windowed SSIM
reference."""

import math

import numpy as np
import pytest

from desnow.metrics import (
    SSIM_C1,
    SSIM_C2,
    SSIM_SIGMA,
    SSIM_WINDOW,
    ScoreReport,
    psnr,
    ssim,
)


class TestPsnr:
    def test_identical_is_infinite(self):
        m = np.random.default_rng(0).uniform(size=(3, 8, 8))
        assert psnr(m, m) == math.inf

    def test_constant_offset_point_one_is_20db(self):
        a = np.full((3, 10, 10), 0.5)
        b = a + 0.1
        assert abs(psnr(a, b) - 20.0) < 1e-6

    def test_offset_half(self):
        a = np.zeros((1, 4, 4))
        b = np.full((1, 4, 4), 0.5)
        assert abs(psnr(a, b) - 10 * math.log10(4.0)) < 1e-9

    def test_monotone_in_noise_amplitude(self):
        rng = np.random.default_rng(1)
        base = rng.uniform(0.3, 0.7, size=(3, 32, 32))
        noise = rng.standard_normal(base.shape)
        vals = [psnr(base, np.clip(base + amp * noise, 0, 1)) for amp in (0.01, 0.05, 0.1)]
        assert vals[0] > vals[1] > vals[2]

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


def reference_ssim_channel(x, y):
    """Brute-force windowed SSIM: explicit loops over valid window
    positions with the same Gaussian weights."""
    half = (SSIM_WINDOW - 1) / 2.0
    t = np.arange(SSIM_WINDOW) - half
    g1 = np.exp(-(t**2) / (2 * SSIM_SIGMA**2))
    g1 /= g1.sum()
    win = np.outer(g1, g1)
    H, W = x.shape
    vals = []
    for i in range(H - SSIM_WINDOW + 1):
        for j in range(W - SSIM_WINDOW + 1):
            px = x[i : i + SSIM_WINDOW, j : j + SSIM_WINDOW]
            py = y[i : i + SSIM_WINDOW, j : j + SSIM_WINDOW]
            mu1 = (win * px).sum()
            mu2 = (win * py).sum()
            s1 = (win * px * px).sum() - mu1**2
            s2 = (win * py * py).sum() - mu2**2
            s12 = (win * px * py).sum() - mu1 * mu2
            num = (2 * mu1 * mu2 + SSIM_C1) * (2 * s12 + SSIM_C2)
            den = (mu1**2 + mu2**2 + SSIM_C1) * (s1 + s2 + SSIM_C2)
            vals.append(num / den)
    return float(np.mean(vals))


class TestSsim:
    def test_self_similarity_is_one(self):
        m = np.random.default_rng(2).uniform(size=(3, 16, 16))
        assert abs(ssim(m, m) - 1.0) < 1e-9

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        a, b = rng.uniform(size=(1, 20, 20)), rng.uniform(size=(1, 20, 20))
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-9

    def test_never_exceeds_one(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            a, b = rng.uniform(size=(1, 14, 14)), rng.uniform(size=(1, 14, 14))
            assert ssim(a, b) <= 1.0 + 1e-12

    def test_matches_brute_force_reference(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(size=(18, 18))
        y = np.clip(x + rng.normal(0, 0.1, x.shape), 0, 1)
        got = ssim(x, y)
        want = reference_ssim_channel(x, y)
        assert abs(got - want) < 1e-10

    def test_checkerboard_inversion_scores_low(self):
        yy, xx = np.mgrid[0:16, 0:16]
        m = ((yy + xx) % 2).astype(np.float64)
        assert ssim(m, 1 - m) < 0.5

    def test_small_image_global_fallback(self):
        m = np.random.default_rng(6).uniform(size=(3, 6, 6))
        assert abs(ssim(m, m) - 1.0) < 1e-9
        n = np.clip(m + 0.2, 0, 1)
        v = ssim(m, n)
        assert -1.0 <= v < 1.0

    def test_equality_iff_identical(self):
        m = np.random.default_rng(7).uniform(size=(1, 16, 16))
        n = m.copy()
        n[0, 8, 8] += 0.05
        assert ssim(m, n) < 1.0 - 1e-6


class TestScoreReport:
    def test_aggregate_is_arithmetic_mean(self):
        r = ScoreReport()
        vals = [(30.0, 0.9), (20.0, 0.7), (25.0, 0.8)]
        for p, s in vals:
            r.append(p, s)
        assert abs(r.psnr_db - 25.0) < 1e-9
        assert abs(r.ssim - 0.8) < 1e-9
        assert len(r) == 3
