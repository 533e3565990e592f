"""Codec tests: transforms, quantizer, rate model, losses, bitstream."""

import math

import numpy as np
import pytest

from icmlab import autodiff as ad
from icmlab import codec
from icmlab.codec import (Bitstream, LicConfig, LicModel, analysis,
                          decode_bitstream, encode_bitstream, loss_human,
                          loss_masked, loss_tl, masked_mse_node, rate_estimate,
                          relax_quantize, synthesis)
from icmlab.errors import BitstreamError, ContractError
from icmlab.masks import BinaryMask
from icmlab.rng import mix, random_floats

from naive_refs import naive_normal_cdf

TINY = LicConfig(latent_channels=4, hidden_channels=(6, 8))


def _image(seed, h=32, w=32):
    return random_floats(mix(0xC0DE, seed), 3 * h * w).reshape(3, h, w)


def _mask(seed, h=32, w=32, density=0.5):
    vals = (random_floats(mix(0x3A5C, seed), h * w) < density).astype(np.uint8)
    return BinaryMask(w, h, vals.reshape(h, w))


@pytest.fixture(scope="module")
def tiny_model():
    return LicModel.init(TINY, seed=1)


class TestTransforms:
    def test_latent_shape(self):
        model = LicModel.init(LicConfig(), seed=0)
        y = analysis(model, _image(1, 64, 64))
        assert y.shape == (48, 8, 8)

    def test_zero_weights_give_all_bias_latent(self):
        model = LicModel.init(TINY, seed=0)
        for name, p in model.params.items():
            if name.startswith("enc"):
                p.data = np.zeros_like(p.data)
        model.params["enc2.b"].data = np.full(4, 1.5)
        y = analysis(model, _image(2))
        assert np.all(y.data == 1.5)

    def test_deterministic_latent(self, tiny_model):
        img = _image(3)
        y1 = analysis(tiny_model, img)
        y2 = analysis(tiny_model, img)
        assert np.array_equal(y1.data, y2.data)

    def test_indivisible_dims_rejected_with_advice(self, tiny_model):
        with pytest.raises(ContractError, match="pad"):
            analysis(tiny_model, random_floats(1, 3 * 30 * 30).reshape(3, 30, 30))

    def test_synthesis_output_in_unit_range(self, tiny_model):
        y = analysis(tiny_model, _image(4))
        xhat = synthesis(tiny_model, y)
        assert xhat.shape == (3, 32, 32)
        assert xhat.data.min() >= 0.0 and xhat.data.max() <= 1.0


class TestRelaxQuantize:
    def test_test_mode_at_mu_is_identity(self, tiny_model):
        mu = tiny_model.mu()
        y = ad.constant(np.broadcast_to(mu[:, None, None], (4, 4, 4)).copy())
        out = relax_quantize(y, tiny_model, "test")
        np.testing.assert_array_equal(out.data, y.data)

    def test_test_mode_rounds_small_offsets_away(self, tiny_model):
        mu = tiny_model.mu()
        y = ad.constant(mu[:, None, None] + np.full((4, 4, 4), 0.4))
        out = relax_quantize(y, tiny_model, "test")
        np.testing.assert_array_equal(out.data, np.broadcast_to(
            mu[:, None, None], (4, 4, 4)))

    def test_train_mode_bounded_and_reproducible(self, tiny_model):
        y = ad.constant(random_floats(9, 4 * 4 * 4).reshape(4, 4, 4))
        out1 = relax_quantize(y, tiny_model, "train", noise_seed=5)
        out2 = relax_quantize(y, tiny_model, "train", noise_seed=5)
        out3 = relax_quantize(y, tiny_model, "train", noise_seed=6)
        assert np.array_equal(out1.data, out2.data)
        assert not np.array_equal(out1.data, out3.data)
        assert np.max(np.abs(out1.data - y.data)) <= 0.5

    def test_unknown_mode_rejected(self, tiny_model):
        with pytest.raises(ContractError):
            relax_quantize(ad.constant(np.zeros((4, 2, 2))), tiny_model, "maybe")


class TestRateEstimate:
    def test_single_element_oracle(self):
        model = LicModel.init(LicConfig(latent_channels=1, hidden_channels=(2, 2)), 0)
        model.params["entropy.mu"].data[:] = 0.0
        model.params["entropy.log_sigma"].data[:] = 0.0
        bits = rate_estimate(ad.constant(np.zeros((1, 1, 1))), model)
        expected = -math.log2(naive_normal_cdf(0.5) - naive_normal_cdf(-0.5))
        assert bits.item() == pytest.approx(expected, abs=1e-12)
        assert bits.item() == pytest.approx(1.3850, abs=1e-3)

    def test_bits_increase_with_sigma_at_mu(self):
        model = LicModel.init(LicConfig(latent_channels=1, hidden_channels=(2, 2)), 0)
        model.params["entropy.mu"].data[:] = 0.0
        previous = None
        for log_sigma in np.linspace(0.0, 4.0, 9):
            model.params["entropy.log_sigma"].data[:] = log_sigma
            bits = rate_estimate(ad.constant(np.zeros((1, 1, 1))), model).item()
            if previous is not None:
                assert bits > previous
            previous = bits

    def test_deep_tail_hits_likelihood_floor(self):
        model = LicModel.init(LicConfig(latent_channels=1, hidden_channels=(2, 2)), 0)
        model.params["entropy.mu"].data[:] = 0.0
        model.params["entropy.log_sigma"].data[:] = 0.0
        bits = rate_estimate(ad.constant(np.full((1, 1, 1), 100.0)), model)
        assert bits.item() == pytest.approx(-math.log2(1e-12), abs=1e-9)

    def test_positive_and_differentiable(self, tiny_model):
        y = ad.parameter(random_floats(12, 4 * 4 * 4).reshape(4, 4, 4) * 4 - 2)
        params = [y, tiny_model.params["entropy.mu"],
                  tiny_model.params["entropy.log_sigma"]]
        err = ad.grad_check(lambda: rate_estimate(y, tiny_model), params,
                            eps=1e-4, coords_per_param=6)
        assert err < 1e-3
        assert rate_estimate(y, tiny_model).item() > 0


class TestLosses:
    def test_loss_decomposes_into_rate_plus_distortion(self, tiny_model):
        parts = loss_human(_image(20), tiny_model, lmbda=0.05, noise_seed=3)
        bpp_term = parts.rate_bits.item() / (32 * 32)
        dist_term = 0.05 * codec.PIXEL_SCALE * parts.distortion.item()
        assert parts.total.item() == pytest.approx(bpp_term + dist_term, rel=1e-15)

    def test_lambda_scales_distortion_linearly(self, tiny_model):
        img = _image(21)
        base = loss_human(img, tiny_model, lmbda=0.05, noise_seed=4)
        double = loss_human(img, tiny_model, lmbda=0.10, noise_seed=4)
        rate_term = base.rate_bits.item() / (32 * 32)
        lhs = double.total.item() - rate_term
        rhs = 2.0 * (base.total.item() - rate_term)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_all_ones_mask_bit_equals_human(self, tiny_model):
        img = _image(22)
        ones = BinaryMask(32, 32, np.ones((32, 32), dtype=np.uint8))
        lh = loss_human(img, tiny_model, 0.05, noise_seed=7)
        lm = loss_masked(img, ones, tiny_model, 0.05, noise_seed=7)
        assert lh.total.item() == lm.total.item()

    def test_all_zero_mask_leaves_rate_only(self, tiny_model):
        img = _image(23)
        zeros = BinaryMask(32, 32, np.zeros((32, 32), dtype=np.uint8))
        parts = loss_masked(img, zeros, tiny_model, 0.05, noise_seed=8)
        assert parts.distortion.item() == 0.0
        assert parts.total.item() == parts.rate_bits.item() / (32 * 32)

    def test_masked_distortion_hand_case(self):
        # x = 1 everywhere, xhat = 0 everywhere, mask covers k of N pixels
        h = w = 8
        x = ad.constant(np.ones((3, h, w)))
        xhat = ad.constant(np.zeros((3, h, w)))
        vals = np.zeros((h, w), dtype=np.uint8)
        vals[:3, :] = 1  # k = 24 of N = 64
        mask = BinaryMask(w, h, vals)
        got = masked_mse_node(x, xhat, mask).item()
        assert got == 24 / 64

    def test_out_of_mask_gradient_exactly_zero(self, tiny_model):
        img = _image(24)
        mask = _mask(25)
        parts = loss_masked(img, mask, tiny_model, 0.05, noise_seed=9)
        parts.total.backward()
        grad = parts.decoded.grad
        outside = mask.values == 0
        assert np.all(grad[:, outside] == 0.0)
        assert np.any(grad[:, ~outside] != 0.0)

    def test_mask_dim_mismatch_rejected(self, tiny_model):
        with pytest.raises(ContractError, match="mask"):
            loss_masked(_image(26), _mask(27, h=16, w=16), tiny_model, 0.05)

    def test_task_loss_with_zero_weight_matches_human(self, tiny_model):
        img = _image(28)
        lh = loss_human(img, tiny_model, 0.05, noise_seed=11)
        lt = loss_tl(img, tiny_model, 0.05, 0.0, noise_seed=11)
        assert lh.total.item() == lt.total.item()

    def test_constant_task_head_gradient_matches_human(self, tiny_model):
        img = _image(29)

        def constant_head(xhat):
            return ad.mul(ad.mean_all(ad.mul(xhat, 0.0)), 1.0)

        lt = loss_tl(img, tiny_model, 0.05, 3.0, constant_head, noise_seed=12)
        lt.total.backward()
        grads_t = {k: p.grad.copy() for k, p in tiny_model.params.items()}
        lh = loss_human(img, tiny_model, 0.05, noise_seed=12)
        lh.total.backward()
        for k, p in tiny_model.params.items():
            np.testing.assert_array_equal(grads_t[k], p.grad)

    def test_default_task_head_is_differentiable(self, tiny_model):
        img = _image(30)
        params = list(tiny_model.params.values())
        err = ad.grad_check(
            lambda: loss_tl(img, tiny_model, 0.05, 2.0, noise_seed=13).total,
            params, eps=1e-4, coords_per_param=3)
        assert err < 1e-3

    def test_non_scalar_task_head_rejected(self, tiny_model):
        with pytest.raises(ContractError, match="scalar"):
            loss_tl(_image(31), tiny_model, 0.05, 1.0,
                    lambda xhat: xhat, noise_seed=1)

    def test_full_masked_loss_grad_check(self):
        model = LicModel.init(LicConfig(latent_channels=3, hidden_channels=(4, 5)), 3)
        img = _image(32, 16, 16)
        mask = _mask(33, 16, 16)
        err = ad.grad_check(
            lambda: loss_masked(img, mask, model, 0.05, noise_seed=14).total,
            list(model.params.values()), eps=1e-4, coords_per_param=3)
        assert err < 1e-3


class TestBitstream:
    def test_header_round_trip(self, tiny_model):
        bs = encode_bitstream(tiny_model, _image(40))
        back = Bitstream.from_bytes(bs.to_bytes())
        assert (back.image_w, back.image_h) == (32, 32)
        assert (back.padded_w, back.padded_h) == (32, 32)
        assert back.channels == 4
        np.testing.assert_array_equal(back.mu, bs.mu)
        np.testing.assert_array_equal(back.sigma, bs.sigma)
        assert back.payload == bs.payload

    def test_latent_round_trip_lossless(self, tiny_model):
        img = _image(41)
        bs = encode_bitstream(tiny_model, img)
        symbols = codec.decode_latent_symbols(tiny_model, bs)
        y = analysis(tiny_model, img).data
        expected = codec.quantize_to_symbols(y, tiny_model.mu())
        np.testing.assert_array_equal(symbols, expected)

    def test_decode_matches_direct_pipeline_bit_exact(self, tiny_model):
        img = _image(42, 40, 24)  # exercises padding (40x24 -> 40x24 both %8==0)
        bs = encode_bitstream(tiny_model, img)
        from_stream = decode_bitstream(tiny_model, bs)
        padded = codec.pad_image(img, tiny_model.config.downsample_factor)
        direct = synthesis(tiny_model, relax_quantize(
            analysis(tiny_model, padded), tiny_model, "test")).data
        direct = direct[:, :img.shape[1], :img.shape[2]]
        assert np.array_equal(from_stream, direct)

    def test_odd_dims_pad_and_crop(self, tiny_model):
        img = _image(43, 33, 29)
        bs = encode_bitstream(tiny_model, img)
        assert (bs.padded_h, bs.padded_w) == (40, 32)
        xhat = decode_bitstream(tiny_model, bs)
        assert xhat.shape == (3, 33, 29)

    def test_payload_close_to_model_cross_entropy(self, tiny_model):
        img = _image(44)
        bs = encode_bitstream(tiny_model, img)
        y = analysis(tiny_model, img).data
        symbols = codec.quantize_to_symbols(y, tiny_model.mu())
        bins = symbols - codec.SYMBOL_MIN
        from icmlab import rangecoder as rc

        ce_bits = 0.0
        for c in range(bins.shape[0]):
            freq = rc.quantize_pmf(codec.channel_pmf(float(tiny_model.sigma()[c])))
            ce_bits += float(-np.log2(freq[bins[c].ravel()] / rc.PROB_TOTAL).sum())
        assert len(bs.payload) <= ce_bits / 8 * 1.02 + 64

    def test_collapsed_model_codes_below_one_bit_per_symbol(self):
        model = LicModel.init(TINY, seed=5)
        for name, p in model.params.items():
            if name.startswith("enc"):
                p.data = np.zeros_like(p.data)
        model.params["entropy.mu"].data[:] = 0.0
        model.params["entropy.log_sigma"].data[:] = math.log(0.05)
        bs = encode_bitstream(model, _image(45, 64, 64))
        n_symbols = bs.channels * bs.latent_h * bs.latent_w
        assert len(bs.payload) * 8 < n_symbols

    def test_corrupted_magic_refused(self, tiny_model):
        blob = bytearray(encode_bitstream(tiny_model, _image(46)).to_bytes())
        blob[0] ^= 0xFF
        with pytest.raises(BitstreamError, match="magic"):
            Bitstream.from_bytes(bytes(blob))

    def test_truncated_payload_fails_with_symbol_index(self, tiny_model):
        bs = encode_bitstream(tiny_model, _image(47))
        bs.payload = bs.payload[: len(bs.payload) // 3]
        with pytest.raises(BitstreamError, match="symbol"):
            decode_bitstream(tiny_model, bs)

    def test_entropy_param_mismatch_refused(self, tiny_model):
        bs = encode_bitstream(tiny_model, _image(48))
        other = LicModel.init(TINY, seed=99)
        other.params["entropy.mu"].data[:] = tiny_model.mu() + 1e-3
        with pytest.raises(ContractError, match="refusing"):
            decode_bitstream(other, bs)

    def test_wrong_channel_count_refused(self, tiny_model):
        bs = encode_bitstream(tiny_model, _image(49))
        other = LicModel.init(LicConfig(latent_channels=6, hidden_channels=(6, 8)), 1)
        with pytest.raises(ContractError, match="channels"):
            decode_bitstream(other, bs)
