import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from grnn.cell import GrnnConfig
from grnn.errors import DimensionError
from grnn.ghost import ghost_flop_count, ghost_param_count
from grnn.metrics import (MetricReport, count_params_flops, feature_similarity, psnr, quantize,
                          score_dataset, score_sequence, ssim)

from oracles import naive_psnr, naive_ssim


@pytest.fixture
def rng():
    return np.random.default_rng(8)


class TestPsnr:
    def test_identical_is_inf(self, rng):
        x = rng.random((1, 3, 8, 8))
        assert psnr(x, x) == math.inf

    def test_uniform_offset(self):
        a = np.zeros((1, 3, 8, 8))
        b = np.full((1, 3, 8, 8), 16 / 255)
        # 10 log10(255^2 / 16^2)
        assert psnr(a, b) == pytest.approx(24.04840395556061, abs=1e-12)

    def test_black_vs_white(self):
        assert psnr(np.zeros((1, 3, 4, 4)), np.ones((1, 3, 4, 4))) == 0.0

    def test_quantization_hides_tiny_differences(self, rng):
        x = quantize(rng.random((1, 3, 4, 4))) / 255
        assert psnr(x, x + 1e-4) == math.inf

    def test_clamping(self):
        assert psnr(np.full((1, 3, 2, 2), 1.7), np.ones((1, 3, 2, 2))) == math.inf

    def test_matches_oracle(self, rng):
        a, b = rng.random((2, 1, 3, 9, 7))
        assert psnr(a, b) == pytest.approx(naive_psnr(a, b), rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(a=arrays(np.float64, (1, 3, 4, 4), elements=st.floats(0, 1)),
           b=arrays(np.float64, (1, 3, 4, 4), elements=st.floats(0, 1)))
    def test_symmetric_and_nonnegative(self, a, b):
        p = psnr(a, b)
        assert p == psnr(b, a)
        assert p >= 0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            psnr(np.zeros((1, 3, 4, 4)), np.zeros((1, 3, 4, 5)))


class TestSsim:
    def test_identical(self, rng):
        x = rng.random((1, 3, 16, 16))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_constants(self):
        a, b = np.zeros((1, 3, 16, 16)), np.ones((1, 3, 16, 16))
        # c1 / (255^2 + c1) with c1 = (0.01 * 255)^2
        assert ssim(a, b) == pytest.approx(9.999000099990002e-05, rel=1e-9)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_oracle(self, seed):
        r = np.random.default_rng(seed)
        a = r.random((1, 3, 16, 16))
        b = np.clip(a + 0.1 * r.standard_normal(a.shape), 0, 1)
        assert abs(ssim(a, b) - naive_ssim(a, b)) < 1e-6

    def test_symmetric(self, rng):
        a, b = rng.random((2, 1, 3, 14, 12))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(a=arrays(np.float64, (1, 1, 11, 11), elements=st.floats(0, 1)),
           b=arrays(np.float64, (1, 1, 11, 11), elements=st.floats(0, 1)))
    def test_bounded(self, a, b):
        assert abs(ssim(a, b)) <= 1 + 1e-12

    def test_too_small(self):
        with pytest.raises(DimensionError):
            ssim(np.zeros((1, 3, 10, 16)), np.zeros((1, 3, 10, 16)))


class TestReports:
    def test_averages(self):
        r = MetricReport(psnr=[30.0, 32.0], ssim=[0.8, 0.9])
        assert r.mean_psnr == 31.0
        assert r.mean_ssim == pytest.approx(0.85)
        assert math.isnan(MetricReport().mean_psnr)

    def test_score_sequence_skip_and_crop(self, rng):
        gt = [rng.random((1, 3, 20, 20)) for _ in range(3)]
        pred = [g.copy() for g in gt]
        pred[0] = np.zeros_like(gt[0])
        pred[1][..., 0, :] = 1 - pred[1][..., 0, :]
        full = score_sequence(pred, gt)
        assert len(full.psnr) == 3 and full.psnr[2] == math.inf
        skipped = score_sequence(pred, gt, skip_first=1, crop_border=2)
        assert skipped.psnr == [math.inf, math.inf]

    def test_score_sequence_length_mismatch(self, rng):
        with pytest.raises(ValueError):
            score_sequence([np.zeros((1, 3, 16, 16))], [])

    def test_dataset_pools_frames(self, rng):
        a = [rng.random((1, 3, 12, 12)) for _ in range(3)]
        b = [rng.random((1, 3, 12, 12))]
        noisy = [np.clip(x + 0.05, 0, 1) for x in a]
        rep = score_dataset({"a": (noisy, a), "b": ([np.zeros_like(b[0])], b)})
        assert len(rep.psnr) == 4
        assert set(rep.rows) == {"a", "b"}
        assert rep.mean_psnr == pytest.approx(np.mean(rep.psnr))


TOY = GrnnConfig(scale=2, channels=8, num_res_blocks=1)


class TestCost:
    def test_hand_summed_table(self):
        rep = count_params_flops(TOY, 4, 4)
        assert [l.name for l in rep.layers] == ["fusion", "trunk.0.conv1", "trunk.0.conv2",
                                                "state_head", "recon_head"]
        # fusion: 26 in, 4 intrinsic, 4 ghosts; trunk/state 8->8; recon 8->12
        assert [l.params for l in rep.layers] == [980, 584, 584, 584, 876]
        assert rep.params == 3608 and rep.plain_params == 4508
        assert [l.macs for l in rep.layers] == [15552, 9216, 9216, 9216, 13824]
        assert rep.macs == 57024

    def test_ratio_one(self):
        rep = count_params_flops(GrnnConfig(scale=4, channels=16, num_res_blocks=2, ghost_ratio=1,
                                            ghost_trunk=True), 8, 8)
        assert rep.param_ratio == 1.0 and rep.mac_ratio == 1.0

    def test_linear_in_area(self):
        a = count_params_flops(TOY, 4, 4)
        b = count_params_flops(TOY, 8, 6)
        assert b.macs * 16 == a.macs * 48
        assert a.params == b.params

    def test_agrees_with_ghost_module(self):
        cfg = GrnnConfig(scale=4, channels=16, num_res_blocks=2, ghost_trunk=True)
        rep = count_params_flops(cfg, 5, 7)
        fusion = rep.layers[0]
        assert (fusion.params, fusion.plain_params) == ghost_param_count(cfg.fusion)[:2]
        assert (fusion.macs, fusion.plain_macs) == ghost_flop_count(cfg.fusion, 5, 7)
        assert rep.layers[1].params == ghost_param_count(cfg.trunk_ghost)[0]

    def test_ghost_trunk_is_cheaper(self):
        a = count_params_flops(GrnnConfig(channels=32, num_res_blocks=2), 8, 8)
        b = count_params_flops(GrnnConfig(channels=32, num_res_blocks=2, ghost_trunk=True), 8, 8)
        assert b.params < a.params and b.macs < a.macs
        assert a.plain_params == b.plain_params


class TestFeatureSimilarity:
    def test_known_pairs(self, rng):
        base = rng.standard_normal((2, 6, 6))
        orth = np.zeros((6, 6))
        orth[::2, :] = 1.0     # orthogonal after centering to a column pattern
        col = np.zeros((6, 6))
        col[:, ::2] = 1.0
        feats = np.stack([base[0], base[0] * 3 + 1, -base[0], orth, col, np.full((6, 6), 2.0)])[None]
        s = feature_similarity(feats, threshold=0.9)
        m = s.matrix
        assert m[0, 1] == pytest.approx(1.0, abs=1e-12)
        assert m[0, 2] == pytest.approx(-1.0, abs=1e-12)
        assert m[3, 4] == pytest.approx(0.0, abs=1e-12)
        assert s.zero_variance == [5]
        assert not m[5, :5].any() and m[5, 5] == 1.0
        assert abs(s.top_pairs[0][2]) == pytest.approx(1.0, abs=1e-12)

    def test_symmetric_unit_diagonal(self, rng):
        s = feature_similarity(rng.standard_normal((1, 12, 5, 5)), top_k=4)
        np.testing.assert_array_equal(s.matrix, s.matrix.T)
        np.testing.assert_array_equal(np.diag(s.matrix), 1.0)
        assert np.abs(s.matrix).max() <= 1.0
        assert len(s.top_pairs) == 4
        mags = [abs(v) for _, _, v in s.top_pairs]
        assert mags == sorted(mags, reverse=True)

    def test_fraction_above(self):
        x = np.arange(16.0).reshape(4, 4)
        feats = np.stack([x, 2 * x, x.T, np.ones((4, 4))])[None]
        s = feature_similarity(feats, threshold=0.9)
        assert s.pairs_above == 1
        assert s.fraction_above == pytest.approx(1 / 6)

    def test_rejects_batch(self):
        with pytest.raises(DimensionError):
            feature_similarity(np.zeros((2, 3, 4, 4)))
