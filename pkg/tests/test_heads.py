"""Kernel-pyramid heads: maxout selection, sum aggregation, and the
7-channel recovery stack."""

import numpy as np
import pytest

from desnow.descriptor import ModelWeights
from desnow.heads import (
    HeadConfig,
    ae_head,
    build_fc,
    init_heads,
    pyramid_maxout,
    pyramid_sum,
    se_head,
    tr_heads,
)
from desnow.rng import stream
from desnow.tensor import Tensor, conv2d, mul, no_grad, slice_channels, tensor
from conftest import fd_grad


def make_weights(in_t=6, in_r=5, beta=4, seed=0):
    cfg = HeadConfig(beta=beta)
    w = ModelWeights()
    init_heads(w, stream(seed, "init"), in_t, in_r, cfg)
    return w, cfg


def feat(seed, ch=6, size=9, batch=1):
    return tensor(np.random.default_rng(seed).uniform(-1, 1, size=(batch, ch, size, size)))


class TestPyramidMaxout:
    def test_beta_one_is_single_conv(self):
        w, cfg = make_weights(beta=1)
        f = feat(0)
        out = pyramid_maxout(f, w, "se", 1, cfg)
        ref = conv2d(f, w["se.k1.w"], w["se.k1.b"])
        np.testing.assert_array_equal(out.data, ref.data)

    def test_kernel_sizes(self):
        assert HeadConfig(beta=4).kernel_sizes == (1, 3, 5, 7)
        assert HeadConfig(beta=1).kernel_sizes == (1,)
        with pytest.raises(ValueError):
            HeadConfig(beta=0)

    def test_dominates_each_branch(self):
        w, cfg = make_weights()
        f = feat(1)
        out = pyramid_maxout(f, w, "se", 1, cfg)
        from desnow.heads import _branch

        for k in cfg.kernel_sizes:
            b = _branch(f, w, "se", k)
            assert np.all(out.data >= b.data - 1e-7)

    def test_constant_branches(self):
        # zero kernels with constant biases: max picks the largest bias
        w, cfg = make_weights(beta=2)
        for name, p in w.items():
            p.data[:] = 0
        w["se.k1.b"].data[:] = 0.2
        w["se.k3.b"].data[:] = 0.7
        out = pyramid_maxout(feat(2), w, "se", 1, cfg)
        np.testing.assert_allclose(out.data, 0.7, rtol=1e-6)

    def test_out_ch_validation(self):
        w, cfg = make_weights()
        with pytest.raises(ValueError, match="positive"):
            pyramid_maxout(feat(3), w, "se", 0, cfg)

    def test_gradient_routes_to_winning_branch(self):
        # k1 wins everywhere (large positive bias); only its parameters and
        # the shared input should receive gradient from the k1 path
        w, cfg = make_weights(beta=2)
        for name, p in w.items():
            p.data[:] = 0
        w["se.k1.b"].data[:] = 1.0
        w["se.k3.b"].data[:] = -1.0
        f = feat(4)
        out = pyramid_maxout(f, w, "se", 1, cfg)
        out.sum().backward()
        assert np.all(w["se.k1.b"].grad != 0)
        np.testing.assert_array_equal(w["se.k3.b"].grad, 0)

    def test_tie_breaks_toward_smallest_kernel(self):
        w, cfg = make_weights(beta=2)
        for name, p in w.items():
            p.data[:] = 0  # all branches output exactly zero -> everywhere tied
        f = feat(5)
        out = pyramid_maxout(f, w, "se", 1, cfg)
        out.sum().backward()
        assert np.all(w["se.k1.b"].grad != 0)
        np.testing.assert_array_equal(w["se.k3.b"].grad, 0)


class TestHeads:
    def test_se_output_in_unit_interval(self):
        w, cfg = make_weights(seed=3)
        out = se_head(feat(6, size=12), w, cfg)
        assert out.data.shape[1] == 1
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_zero_weights_zero_mask(self):
        w, cfg = make_weights()
        for _, p in w.items():
            p.data[:] = 0
        out = se_head(feat(7), w, cfg)
        np.testing.assert_array_equal(out.data, 0)

    def test_ae_reaches_negative_values(self):
        w, cfg = make_weights(seed=1)
        w["ae.slope"].data[:] = 0.5
        found_negative = False
        for seed in range(8):
            out = ae_head(feat(seed, size=8), w, cfg)
            if out.data.min() < 0:
                found_negative = True
                break
        assert found_negative

    def test_ae_channels_differ(self):
        w, cfg = make_weights(seed=2)
        out = ae_head(feat(9), w, cfg)
        assert out.data.shape[1] == 3
        assert not np.allclose(out.data[:, 0], out.data[:, 1])

    def test_se_gradcheck_interior(self):
        w, cfg = make_weights(in_t=4, beta=2, seed=5)
        f0 = np.random.default_rng(10).uniform(-1, 1, size=(1, 4, 6, 6))

        # push the operating point inside (0,1) so the clamp is transparent
        for name, p in w.items():
            if name.startswith("se.") and name.endswith(".w"):
                p.data *= 0.2
            if name.startswith("se.") and name.endswith(".b"):
                p.data[:] = 0.5
        for t in w.parameters():
            t.data = t.data.astype(np.float64)
        ft = Tensor(f0.copy(), requires_grad=True)
        out = se_head(ft, w, cfg)
        assert 0 < out.data.min() and out.data.max() < 1, "operating point must be interior"
        mul(out, out).sum().backward()

        def run():
            with no_grad():
                o = se_head(Tensor(f0), w, cfg)
            return float((o.data**2).sum())

        np.testing.assert_allclose(ft.grad, fd_grad(run, f0), rtol=1e-4, atol=1e-8)

    def test_ae_gradcheck(self):
        w, cfg = make_weights(in_t=4, beta=2, seed=6)
        f0 = np.random.default_rng(11).uniform(-1, 1, size=(1, 4, 6, 6))
        for t in w.parameters():
            t.data = t.data.astype(np.float64)
        ft = Tensor(f0.copy(), requires_grad=True)
        out = ae_head(ft, w, cfg)
        mul(out, out).sum().backward()

        def run():
            with no_grad():
                o = ae_head(Tensor(f0), w, cfg)
            return float((o.data**2).sum())

        np.testing.assert_allclose(ft.grad, fd_grad(run, f0), rtol=1e-4, atol=1e-8)

    def test_fused_matches_separate_heads(self):
        w, cfg = make_weights(seed=7)
        f = feat(12, size=10)
        z1, a1 = tr_heads(f, w, cfg)
        z2, a2 = se_head(f, w, cfg), ae_head(f, w, cfg)
        np.testing.assert_allclose(z1.data, z2.data, atol=1e-6)
        np.testing.assert_allclose(a1.data, a2.data, atol=1e-6)


class TestResidualHead:
    def test_beta_one_single_conv(self):
        w, cfg = make_weights(beta=1)
        f = feat(0, ch=5)
        out = pyramid_sum(f, w, cfg)
        ref = conv2d(f, w["rg.k1.w"], w["rg.k1.b"])
        np.testing.assert_array_equal(out.data, ref.data)

    def test_zero_weights_zero_residual(self):
        w, cfg = make_weights()
        for _, p in w.items():
            p.data[:] = 0
        out = pyramid_sum(feat(1, ch=5), w, cfg)
        np.testing.assert_array_equal(out.data, 0)

    def test_equals_sum_of_branches(self):
        w, cfg = make_weights(seed=4)
        f = feat(2, ch=5)
        out = pyramid_sum(f, w, cfg)
        from desnow.heads import _branch

        total = np.zeros_like(out.data)
        for k in cfg.kernel_sizes:
            total += _branch(f, w, "rg", k).data
        np.testing.assert_allclose(out.data, total, atol=1e-6)

    def test_sum_and_maxout_are_different_reductions(self):
        # same kernels, different reduction: for generic weights they differ
        w, cfg = make_weights(in_t=6, in_r=6, seed=8)
        f = feat(3, ch=6)
        mx = pyramid_maxout(f, w, "ae", 3, cfg)
        w2, _ = make_weights(in_t=6, in_r=6, seed=8)
        for k in cfg.kernel_sizes:
            tag = f"k{k}" if k <= 3 else None
            if tag:
                w2[f"rg.{tag}.w"].data[:] = w[f"ae.{tag}.w"].data
                w2[f"rg.{tag}.b"].data[:] = w[f"ae.{tag}.b"].data
            else:
                w2[f"rg.k{k}h.w"].data[:] = w[f"ae.k{k}h.w"].data
                w2[f"rg.k{k}h.b"].data[:] = w[f"ae.k{k}h.b"].data
                w2[f"rg.k{k}v.w"].data[:] = w[f"ae.k{k}v.w"].data
                w2[f"rg.k{k}v.b"].data[:] = w[f"ae.k{k}v.b"].data
        sm = pyramid_sum(f, w2, cfg)
        assert not np.allclose(mx.data, sm.data, atol=1e-3)

    def test_preserves_spatial_dims(self):
        w, cfg = make_weights()
        f = feat(4, ch=5, size=13)
        assert pyramid_sum(f, w, cfg).data.shape[2:] == (13, 13)


class TestRecoveryStack:
    def test_seven_channels_in_order(self):
        rng = np.random.default_rng(0)
        yp = tensor(rng.uniform(size=(1, 3, 5, 5)))
        zh = tensor(rng.uniform(size=(1, 1, 5, 5)))
        a = tensor(rng.uniform(size=(1, 3, 5, 5)))
        fc = build_fc(yp, zh, a)
        assert fc.data.shape[1] == 7
        np.testing.assert_array_equal(slice_channels(fc, 0, 3).data, yp.data)
        np.testing.assert_array_equal(slice_channels(fc, 3, 4).data, zh.data)
        np.testing.assert_array_equal(slice_channels(fc, 4, 7).data, a.data)

    def test_shape_mismatch(self):
        yp = tensor(np.zeros((1, 3, 5, 5)))
        zh = tensor(np.zeros((1, 1, 4, 5)))
        a = tensor(np.zeros((1, 3, 5, 5)))
        with pytest.raises(ValueError, match="mismatch"):
            build_fc(yp, zh, a)
