"""Channel-alignment augmentation operators and the dispatcher."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from crossrank.imgproc import (
    CHANNEL_NAMES,
    MaaConfig,
    MaaSample,
    PatchRect,
    Simplex3Weights,
    apply_maa,
    apply_maa_sample,
    cross_channel_cutmix,
    expand_infrared,
    from_uint8,
    patch_from_lambda,
    sample_cutmix_patch,
    sample_maa_params,
    sample_simplex3,
    spectrum_jitter,
    to_uint8,
    weighted_grayscale,
)


@st.composite
def images(draw, max_side=8):
    h = draw(st.integers(1, max_side))
    w = draw(st.integers(1, max_side))
    seed = draw(st.integers(0, 2**31))
    return np.random.default_rng(seed).random((3, h, w))


def planes_identical(img):
    return np.array_equal(img[0], img[1]) and np.array_equal(img[1], img[2])


class TestSimplex3Weights:
    def test_valid(self):
        Simplex3Weights(0.299, 0.587, 0.114)
        Simplex3Weights(1.0, 0.0, 0.0)

    def test_rejects_bad_sum_and_range(self):
        with pytest.raises(ValueError):
            Simplex3Weights(0.5, 0.5, 0.5)
        with pytest.raises(ValueError):
            Simplex3Weights(-0.1, 0.6, 0.5)
        with pytest.raises(ValueError):
            Simplex3Weights(1.1, -0.05, -0.05)


class TestWeightedGrayscale:
    def test_one_hot_picks_red_plane(self):
        rng = np.random.default_rng(0)
        img = rng.random((3, 5, 4))
        out = weighted_grayscale(img, Simplex3Weights(1.0, 0.0, 0.0))
        assert planes_identical(out)
        np.testing.assert_array_equal(out[0], img[0])

    def test_standard_luma_pixel(self):
        img = np.zeros((3, 1, 1))
        img[0] = 1.0  # pure red
        out = weighted_grayscale(img, Simplex3Weights(0.299, 0.587, 0.114))
        np.testing.assert_allclose(out, 0.299)

    def test_equal_weights_average(self):
        img = np.array([0.3, 0.6, 0.9]).reshape(3, 1, 1)
        out = weighted_grayscale(img, Simplex3Weights(1 / 3, 1 / 3, 1 / 3))
        np.testing.assert_allclose(out, 0.6)

    @given(images())
    def test_output_in_range_and_convex(self, img):
        out = weighted_grayscale(img, Simplex3Weights(0.2, 0.5, 0.3))
        assert planes_identical(out)
        assert out.min() >= 0.0 and out.max() <= 1.0
        # convexity: each pixel between the channel min and max
        assert np.all(out[0] >= img.min(axis=0) - 1e-12)
        assert np.all(out[0] <= img.max(axis=0) + 1e-12)

    def test_rejects_invalid_image(self):
        with pytest.raises(ValueError):
            weighted_grayscale(np.full((3, 2, 2), 1.5), Simplex3Weights(1, 0, 0))
        with pytest.raises(ValueError):
            weighted_grayscale(np.zeros((2, 2, 2)), Simplex3Weights(1, 0, 0))
        with pytest.raises(ValueError):
            weighted_grayscale(np.full((3, 2, 2), np.nan), Simplex3Weights(1, 0, 0))


class TestSampleSimplex3:
    def test_draws_satisfy_invariant(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            w = sample_simplex3(rng)  # constructor enforces the invariant
            assert 0.0 <= min(w.a1, w.a2, w.a3) and max(w.a1, w.a2, w.a3) <= 1.0

    def test_monte_carlo_moments(self):
        rng = np.random.default_rng(2)
        draws = np.array([[w.a1, w.a2, w.a3] for w in (sample_simplex3(rng) for _ in range(100_000))])
        np.testing.assert_allclose(draws.mean(axis=0), 1 / 3, atol=0.01)
        # P(a1 > 1/2) = (1 - 1/2)^2 for the uniform simplex law
        assert abs(np.mean(draws[:, 0] > 0.5) - 0.25) < 0.01


class TestCrossChannelCutmix:
    def test_zero_area_patch_is_bg_everywhere(self):
        rng = np.random.default_rng(3)
        img = rng.random((3, 6, 5))
        out = cross_channel_cutmix(img, bg=1, fg=2, rect=PatchRect(2, 2, 0, 3))
        assert planes_identical(out)
        np.testing.assert_array_equal(out[0], img[1])

    def test_full_patch_is_fg_everywhere(self):
        rng = np.random.default_rng(4)
        img = rng.random((3, 6, 5))
        out = cross_channel_cutmix(img, bg=1, fg=2, rect=PatchRect(0, 0, 6, 5))
        np.testing.assert_array_equal(out[0], img[2])

    @given(images(), st.integers(0, 2**31))
    def test_membership_partition(self, img, seed):
        rng = np.random.default_rng(seed)
        h, w = img.shape[1], img.shape[2]
        rect = sample_cutmix_patch(rng, h, w)
        bg, fg = 0, 2
        out = cross_channel_cutmix(img, bg, fg, rect)
        assert planes_identical(out)
        inside = np.zeros((h, w), dtype=bool)
        inside[rect.top : rect.top + rect.patch_h, rect.left : rect.left + rect.patch_w] = True
        np.testing.assert_array_equal(out[0][inside], img[fg][inside])
        np.testing.assert_array_equal(out[0][~inside], img[bg][~inside])

    def test_rejects_same_channel_and_bad_rect(self):
        img = np.zeros((3, 4, 4))
        with pytest.raises(ValueError):
            cross_channel_cutmix(img, 1, 1, PatchRect(0, 0, 1, 1))
        with pytest.raises(ValueError):
            cross_channel_cutmix(img, 0, 1, PatchRect(2, 0, 3, 1))
        with pytest.raises(ValueError):
            cross_channel_cutmix(img, 0, 1, PatchRect(-1, 0, 1, 1))


class TestPatchSampling:
    def test_lambda_endpoints(self):
        assert patch_from_lambda(1.0, 3, 3, 8, 8).patch_h == 0
        full = patch_from_lambda(0.0, 4, 4, 8, 8)
        assert (full.patch_h, full.patch_w) == (8, 8)
        assert (full.top, full.left) == (0, 0)

    def test_rect_always_within_bounds(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            h = int(rng.integers(1, 20))
            w = int(rng.integers(1, 20))
            r = sample_cutmix_patch(rng, h, w)
            assert 0 <= r.top and r.top + r.patch_h <= h
            assert 0 <= r.left and r.left + r.patch_w <= w

    def test_unclipped_area_fraction_matches_lambda_law(self):
        # centered patches never clip, so the area fraction is (1-lam) up to
        # rounding; its mean over lam ~ U(0,1) is 1/2
        rng = np.random.default_rng(6)
        h, w = 64, 32
        fractions = []
        for _ in range(10_000):
            lam = float(rng.random())
            r = patch_from_lambda(lam, h // 2, w // 2, h, w)
            fractions.append(r.patch_h * r.patch_w / (h * w))
        assert abs(np.mean(fractions) - 0.5) < 0.02


class TestSpectrumJitter:
    def test_beta1_one_is_identity(self):
        rng = np.random.default_rng(7)
        img = rng.random((3, 5, 5))
        np.testing.assert_array_equal(spectrum_jitter(img, 1, 1.0), img)

    def test_beta1_zero_is_degenerate(self):
        rng = np.random.default_rng(8)
        img = rng.random((3, 5, 5))
        out = spectrum_jitter(img, 2, 0.0)
        assert planes_identical(out)
        np.testing.assert_array_equal(out[0], img[2])

    def test_midpoint_pixel(self):
        img = np.array([0.2, 0.4, 0.8]).reshape(3, 1, 1)
        out = spectrum_jitter(img, 0, 0.5)
        np.testing.assert_allclose(out.ravel(), [0.2, 0.3, 0.5])

    @given(images(), st.floats(0, 1), st.integers(0, 2))
    def test_range_closure(self, img, beta1, ch):
        out = spectrum_jitter(img, ch, beta1)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_rejects_bad_beta(self):
        img = np.zeros((3, 2, 2))
        with pytest.raises(ValueError):
            spectrum_jitter(img, 0, 1.5)
        with pytest.raises(ValueError):
            spectrum_jitter(img, 0, -0.1)
        with pytest.raises(ValueError):
            spectrum_jitter(img, 3, 0.5)


class TestExpandInfrared:
    def test_constant_plane(self):
        out = expand_infrared(np.full((2, 3), 0.5))
        assert out.shape == (3, 2, 3)
        np.testing.assert_array_equal(out, 0.5)

    def test_round_trip(self):
        rng = np.random.default_rng(9)
        plane = rng.random((4, 6))
        out = expand_infrared(plane)
        assert planes_identical(out)
        for ch in range(3):
            np.testing.assert_array_equal(out[ch], plane)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            expand_infrared(np.full((2, 2), 1.2))


class TestMaaDispatcher:
    def test_gate_closed_is_identity(self):
        rng = np.random.default_rng(10)
        img = rng.random((3, 6, 6))
        out = apply_maa(img, rng, MaaConfig(apply_probability=0.0))
        np.testing.assert_array_equal(out, img)

    def test_deterministic_given_seed(self):
        img = np.random.default_rng(11).random((3, 7, 5))
        a = apply_maa(img, np.random.default_rng(42))
        b = apply_maa(img, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_forced_wg_matches_recomputed_grayscale(self):
        img = np.random.default_rng(12).random((3, 6, 6))
        cfg = MaaConfig(strategy_weights=(1.0, 0.0, 0.0))
        for seed in range(30):
            rng = np.random.default_rng(seed)
            sample = sample_maa_params(rng, cfg, 6, 6)
            assert sample.strategy == "wg"
            out = apply_maa_sample(img, sample)
            np.testing.assert_array_equal(out, weighted_grayscale(img, sample.weights))

    def test_strategy_frequencies_uniform(self):
        rng = np.random.default_rng(13)
        counts = {"wg": 0, "cc": 0, "sj": 0}
        n = 10_000
        for _ in range(n):
            counts[sample_maa_params(rng, MaaConfig(), 8, 8).strategy] += 1
        for c in counts.values():
            assert abs(c / n - 1 / 3) < 0.02

    @given(images(), st.integers(0, 2**31))
    def test_output_always_a_valid_image(self, img, seed):
        out = apply_maa(img, np.random.default_rng(seed))
        assert out.shape == img.shape
        assert np.all(np.isfinite(out))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_describe_lines_parse(self):
        rng = np.random.default_rng(14)
        seen = set()
        for _ in range(200):
            s = sample_maa_params(rng, MaaConfig(), 9, 7)
            seen.add(s.strategy)
            text = s.describe()
            assert text.startswith(f"strategy={s.strategy}")
            fields = dict(kv.split("=", 1) for kv in text.split())
            assert fields["strategy"] in ("wg", "cc", "sj")
        assert seen == {"wg", "cc", "sj"}

    def test_identity_sample_describe(self):
        assert MaaSample(strategy="identity").describe() == "strategy=identity"


class TestUint8Boundary:
    def test_uint8_round_trip_exact(self):
        arr = np.arange(256, dtype=np.uint8).reshape(1, 16, 16).repeat(3, axis=0)
        np.testing.assert_array_equal(to_uint8(from_uint8(arr)), arr)

    def test_round_half_up(self):
        img = np.array([0.0, 1 / 510, 1.0 / 255 - 1e-9, 0.5, 1.0]).reshape(1, 1, 5).repeat(3, 0)
        got = to_uint8(img)[0, 0]
        np.testing.assert_array_equal(got, [0, 1, 1, 128, 255])

    @given(images())
    def test_float_round_trip_within_half_step(self, img):
        back = from_uint8(to_uint8(img))
        assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


def test_channel_names_order():
    assert CHANNEL_NAMES == ("r", "g", "b")
