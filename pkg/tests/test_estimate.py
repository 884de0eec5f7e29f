"""SRP-PHAT, masked SRP, narrowband combination, MUSIC, and the flop model."""

import numpy as np
import pytest

from doalab import estimate
from doalab.attention import AttentionMask, band_range_mask, ones_mask
from doalab.estimate import (
    CrossSpectralTensor,
    PhatWeighting,
    SpatialPowerSpectrum,
    aggregate_frames,
    cross_spectral_tensor,
    mask_weighting,
    narrowband_srp,
    norm_music,
    normalize_sps,
    output_masking,
    phat_weighting,
    pick_doa,
    sps_loss,
    srp,
    srp_flops,
    srp_mp,
    srp_narrowband,
    srp_phat,
)
from doalab.geometry import ArrayGeometry, make_grid, steering_matrix
from doalab.signal import MultichannelSpectrogram, stft
from doalab.simulate import plane_wave_synthesize, white_noise

FS = 16000
GEOM = ArrayGeometry.uniform(4, 0.08)
GRID = make_grid(37)


def _spec(bins):
    bins = np.asarray(bins, dtype=complex)
    k = bins.shape[1]
    return MultichannelSpectrogram(bins, FS, k - 1, 2 * (k - 1))


def _plane_wave_spec(doa_deg, samples=4000, seed=0, channels=4):
    src = white_noise(1, samples, seed=seed)
    geom = ArrayGeometry.uniform(channels, 0.08)
    return stft(plane_wave_synthesize(src, doa_deg, geom)), geom


class TestPhatWeighting:
    def test_magnitude_two_gives_half(self):
        spec = _spec(np.full((1, 2, 2), 2.0))
        np.testing.assert_array_equal(phat_weighting(spec).values, 0.5)

    def test_zero_bins_get_epsilon(self):
        spec = _spec(np.zeros((1, 2, 2)))
        np.testing.assert_array_equal(phat_weighting(spec).values, 1e-8)

    def test_weighted_product_has_unit_modulus(self):
        rng = np.random.default_rng(0)
        bins = rng.standard_normal((2, 5, 4)) + 1j * rng.standard_normal((2, 5, 4))
        spec = _spec(bins)
        np.testing.assert_allclose(
            np.abs(spec.bins * phat_weighting(spec).values), 1.0, rtol=1e-12
        )

    def test_nonpositive_epsilon_rejected(self):
        with pytest.raises(ValueError):
            phat_weighting(_spec(np.ones((1, 2, 2))), epsilon=0.0)


class TestMaskWeighting:
    def test_ones_mask_is_identity(self):
        w = PhatWeighting(np.random.default_rng(1).uniform(0, 1, (2, 3, 4)))
        out = mask_weighting(w, ones_mask(3, 4))
        np.testing.assert_array_equal(out.values, w.values)

    def test_half_mask_scales_cross_spectra_by_quarter(self):
        rng = np.random.default_rng(2)
        bins = rng.standard_normal((2, 3, 4)) + 1j * rng.standard_normal((2, 3, 4))
        spec = _spec(bins)
        w = phat_weighting(spec)
        full = cross_spectral_tensor(spec, w)
        half = cross_spectral_tensor(spec, mask_weighting(w, AttentionMask(np.full((3, 4), 0.5))))
        np.testing.assert_allclose(half.values, 0.25 * full.values, rtol=1e-12)

    def test_zeroed_band_removes_bin(self):
        w = PhatWeighting(np.ones((2, 3, 4)))
        weights = np.ones((3, 4))
        weights[1] = 0.0
        out = mask_weighting(w, AttentionMask(weights))
        assert not out.values[:, 1, :].any()
        np.testing.assert_array_equal(out.values[:, [0, 2], :], 1.0)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            mask_weighting(PhatWeighting(np.ones((2, 3, 4))), ones_mask(3, 5))


class TestCrossSpectralTensor:
    def setup_method(self):
        rng = np.random.default_rng(3)
        bins = rng.standard_normal((4, 5, 6)) + 1j * rng.standard_normal((4, 5, 6))
        self.spec = _spec(bins)
        self.phi = cross_spectral_tensor(self.spec, phat_weighting(self.spec))

    def test_shape(self):
        assert self.phi.values.shape == (5, 6, 4, 4)

    def test_hermitian_per_bin(self):
        np.testing.assert_allclose(
            self.phi.values, np.conj(np.swapaxes(self.phi.values, 2, 3)), rtol=1e-12
        )

    def test_diagonal_real_nonnegative(self):
        diag = np.einsum("knqq->knq", self.phi.values)
        assert np.allclose(diag.imag, 0.0)
        assert np.all(diag.real >= 0.0)

    def test_unit_modulus_under_phat(self):
        # all bins are active, so every weighted product lies on the unit circle
        np.testing.assert_allclose(np.abs(self.phi.values), 1.0, rtol=1e-12)


class TestSrp:
    def test_plane_wave_peaks_on_grid_angle(self):
        for doa in (30.0, 60.0, 145.0):
            spec, geom = _plane_wave_spec(doa, seed=4)
            sps = srp_phat(spec, GRID, geom)
            assert pick_doa(sps, GRID) == doa

    def test_broadside_picks_90(self):
        spec, geom = _plane_wave_spec(90.0, seed=5)
        assert pick_doa(srp_phat(spec, GRID, geom), GRID) == 90.0

    def test_global_phase_invariance(self):
        spec, geom = _plane_wave_spec(75.0, seed=6)
        rotated = MultichannelSpectrogram(
            spec.bins * np.exp(0.7j), spec.sample_rate, spec.hop, spec.window_length
        )
        np.testing.assert_allclose(
            srp_phat(spec, GRID, geom).values,
            srp_phat(rotated, GRID, geom).values,
            rtol=1e-9,
        )

    def test_channel_reversal_mirrors_spectrum(self):
        # reversing the microphone order negates all delay differences,
        # which maps the response of theta onto 180 - theta
        spec, geom = _plane_wave_spec(40.0, seed=7)
        reversed_spec = MultichannelSpectrogram(
            spec.bins[::-1], spec.sample_rate, spec.hop, spec.window_length
        )
        np.testing.assert_allclose(
            srp_phat(reversed_spec, GRID, geom).values,
            srp_phat(spec, GRID, geom).values[::-1],
            rtol=1e-9,
            atol=1e-12,
        )

    def test_pairwise_and_beamformer_paths_agree(self):
        spec, geom = _plane_wave_spec(110.0, samples=2000, seed=8)
        w = phat_weighting(spec)
        phi = cross_spectral_tensor(spec, w)
        steering = steering_matrix(GRID, geom, spec.num_bins, FS, spec.window_length)
        slow = srp(phi, steering)
        fast = srp_narrowband(spec, GRID, geom).values.sum(axis=(1, 2))
        np.testing.assert_allclose(slow.values, fast, rtol=1e-9)

    def test_empty_frame_range_raises(self):
        spec, geom = _plane_wave_spec(90.0, samples=2000, seed=9)
        with pytest.raises(ValueError, match="empty frame range"):
            srp_phat(spec, GRID, geom, frame_range=(3, 3))


class TestNarrowband:
    def test_sum_recovers_broadband(self):
        spec, geom = _plane_wave_spec(55.0, samples=2000, seed=10)
        w = phat_weighting(spec)
        phi = cross_spectral_tensor(spec, w)
        steering = steering_matrix(GRID, geom, spec.num_bins, FS, spec.window_length)
        nb = narrowband_srp(phi, steering)
        np.testing.assert_allclose(
            nb.values.sum(axis=(1, 2)), srp(phi, steering).values, rtol=1e-9
        )

    def test_dc_band_is_constant_over_directions(self):
        spec, geom = _plane_wave_spec(35.0, samples=2000, seed=11)
        nb = srp_narrowband(spec, GRID, geom)
        np.testing.assert_allclose(
            nb.values[:, 0, :], np.broadcast_to(nb.values[0, 0, :], (37, nb.values.shape[2])), atol=1e-12
        )

    def test_shape(self):
        spec, geom = _plane_wave_spec(90.0, samples=2000, seed=12)
        nb = srp_narrowband(spec, GRID, geom)
        assert nb.values.shape == (37, spec.num_bins, spec.num_frames)


class TestOutputMasking:
    def setup_method(self):
        rng = np.random.default_rng(13)
        self.nb = SpatialPowerSpectrum(rng.uniform(-1, 1, (5, 4, 3)))

    def test_ones_mask_is_plain_average(self):
        out = output_masking(self.nb, ones_mask(4, 3))
        np.testing.assert_allclose(out.values, self.nb.values.mean(axis=(1, 2)), rtol=1e-12)

    def test_single_bin_mask_selects_bin(self):
        weights = np.zeros((4, 3))
        weights[2, 1] = 1.0
        out = output_masking(self.nb, AttentionMask(weights))
        np.testing.assert_allclose(out.values, self.nb.values[:, 2, 1], rtol=1e-12)

    def test_mask_scale_invariance(self):
        a = output_masking(self.nb, AttentionMask(np.full((4, 3), 1.0)))
        b = output_masking(self.nb, AttentionMask(np.full((4, 3), 0.25)))
        np.testing.assert_allclose(a.values, b.values, rtol=1e-12)

    def test_empty_mask_raises(self):
        with pytest.raises(ValueError, match="empty attention"):
            output_masking(self.nb, AttentionMask(np.zeros((4, 3))))


class TestNormalizeAndPick:
    def test_normalize_example(self):
        out = normalize_sps(SpatialPowerSpectrum(np.array([2.0, 4.0, 1.0])))
        np.testing.assert_array_equal(out.values, [0.5, 1.0, 0.25])
        assert out.normalized

    def test_normalize_idempotent(self):
        sps = SpatialPowerSpectrum(np.random.default_rng(14).uniform(0.1, 2, 37))
        once = normalize_sps(sps)
        np.testing.assert_array_equal(normalize_sps(once).values, once.values)

    def test_normalize_preserves_argmax(self):
        sps = SpatialPowerSpectrum(np.random.default_rng(15).uniform(0.1, 2, 37))
        assert np.argmax(normalize_sps(sps).values) == np.argmax(sps.values)

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            normalize_sps(SpatialPowerSpectrum(np.zeros(5)))

    def test_pick_one_hot(self):
        values = np.zeros(37)
        values[18] = 1.0
        assert pick_doa(SpatialPowerSpectrum(values), GRID) == 90.0

    def test_pick_tie_breaks_to_lowest_index(self):
        assert pick_doa(SpatialPowerSpectrum(np.ones(37)), GRID) == 0.0

    def test_pick_rescale_invariant(self):
        values = np.random.default_rng(16).uniform(0, 1, 37)
        a = pick_doa(SpatialPowerSpectrum(values), GRID)
        b = pick_doa(SpatialPowerSpectrum(3.0 * values), GRID)
        assert a == b

    def test_pick_length_mismatch_raises(self):
        with pytest.raises(ValueError):
            pick_doa(SpatialPowerSpectrum(np.ones(5)), GRID)

    def test_aggregate_frames_mean(self):
        per_frame = SpatialPowerSpectrum(np.array([[1.0, 3.0], [2.0, 6.0]]))
        np.testing.assert_array_equal(aggregate_frames(per_frame).values, [2.0, 4.0])
        np.testing.assert_array_equal(
            aggregate_frames(per_frame, frame_range=(1, 2)).values, [3.0, 6.0]
        )


class TestSpsLoss:
    def test_identical_spectra_give_zero(self):
        sps = normalize_sps(SpatialPowerSpectrum(np.array([1.0, 0.5])))
        assert sps_loss(sps, sps) == 0.0

    def test_worked_example(self):
        a = SpatialPowerSpectrum(np.array([1.0, 0.0]), normalized=True)
        b = SpatialPowerSpectrum(np.array([1.0, 0.5]), normalized=True)
        assert sps_loss(a, b) == pytest.approx(0.125)

    def test_requires_normalized(self):
        a = SpatialPowerSpectrum(np.array([1.0, 0.0]))
        b = SpatialPowerSpectrum(np.array([1.0, 0.5]), normalized=True)
        with pytest.raises(ValueError, match="normalized"):
            sps_loss(a, b)

    def test_length_mismatch_raises(self):
        a = SpatialPowerSpectrum(np.array([1.0, 0.0]), normalized=True)
        b = SpatialPowerSpectrum(np.array([1.0, 0.5, 0.0]), normalized=True)
        with pytest.raises(ValueError):
            sps_loss(a, b)


class TestSrpFlops:
    def test_published_operating_point(self):
        assert srp_flops(257, 37, 4) == 183241

    def test_single_mic_leaves_weighting_term(self):
        # Q = 1 has no pairs, only the 5K weighting flops
        assert srp_flops(257, 37, 1) == 5 * 257

    def test_minimal_pair_case(self):
        assert srp_flops(1, 1, 2) == 15

    def test_formula(self):
        k, c, q = 64, 19, 3
        expected = round(((q - 1) ** 2 / 2) * (4 * k * c + 6 * k) + 5 * k * q)
        assert srp_flops(k, c, q) == expected

    def test_invalid_sizes_raise(self):
        with pytest.raises(ValueError):
            srp_flops(0, 1, 1)


class TestSrpMp:
    def test_ones_mask_matches_srp_phat_bitwise(self):
        spec, geom = _plane_wave_spec(125.0, seed=17)
        plain = srp_phat(spec, GRID, geom)
        masked = srp_mp(spec, ones_mask(spec.num_bins, spec.num_frames), GRID, geom)
        np.testing.assert_array_equal(plain.values, masked.values)

    def test_output_is_normalized(self):
        spec, geom = _plane_wave_spec(60.0, seed=18)
        sps = srp_mp(spec, ones_mask(spec.num_bins, spec.num_frames), GRID, geom)
        assert sps.normalized and sps.values.max() == 1.0

    def test_band_mask_still_recovers_plane_wave(self):
        spec, geom = _plane_wave_spec(70.0, seed=19)
        mask = band_range_mask(spec.num_bins, spec.num_frames, 20, 180)
        assert pick_doa(srp_mp(spec, mask, GRID, geom), GRID) == 70.0

    def test_all_zero_mask_raises(self):
        spec, geom = _plane_wave_spec(90.0, samples=2000, seed=20)
        with pytest.raises(ValueError, match="empty attention"):
            srp_mp(spec, AttentionMask(np.zeros((spec.num_bins, spec.num_frames))), GRID, geom)

    def test_max_freq_limit_zeroes_high_bins(self):
        spec, geom = _plane_wave_spec(100.0, seed=21)
        full = srp_mp(spec, ones_mask(spec.num_bins, spec.num_frames), GRID, geom)
        limited = srp_mp(
            spec, ones_mask(spec.num_bins, spec.num_frames), GRID, geom, max_freq_hz=2000.0
        )
        assert pick_doa(limited, GRID) == 100.0
        assert not np.array_equal(full.values, limited.values)


class TestNormMusic:
    def test_plane_wave_peaks_on_grid_angle(self):
        for doa in (45.0, 90.0, 130.0):
            spec, geom = _plane_wave_spec(doa, seed=22)
            mask = ones_mask(spec.num_bins, spec.num_frames)
            assert pick_doa(norm_music(spec, mask, GRID, geom), GRID) == doa

    def test_band_weighted_variant_matches(self):
        spec, geom = _plane_wave_spec(65.0, seed=23)
        mask = band_range_mask(spec.num_bins, spec.num_frames, 30, 200)
        assert pick_doa(norm_music(spec, mask, GRID, geom), GRID) == 65.0

    def test_output_is_normalized(self):
        spec, geom = _plane_wave_spec(90.0, seed=24)
        sps = norm_music(spec, ones_mask(spec.num_bins, spec.num_frames), GRID, geom)
        assert sps.normalized and sps.values.max() == 1.0

    def test_num_sources_must_be_below_channel_count(self):
        spec, geom = _plane_wave_spec(90.0, samples=4000, seed=25)
        mask = ones_mask(spec.num_bins, spec.num_frames)
        with pytest.raises(ValueError, match="num_sources"):
            norm_music(spec, mask, GRID, geom, num_sources=4)

    def test_too_few_frames_raise(self):
        spec, geom = _plane_wave_spec(90.0, samples=1100, seed=26)
        assert spec.num_frames < 4
        mask = ones_mask(spec.num_bins, spec.num_frames)
        with pytest.raises(ValueError, match="full-rank"):
            norm_music(spec, mask, GRID, geom)

    def test_all_zero_mask_raises(self):
        spec, geom = _plane_wave_spec(90.0, seed=27)
        with pytest.raises(ValueError, match="empty attention"):
            norm_music(
                spec, AttentionMask(np.zeros((spec.num_bins, spec.num_frames))), GRID, geom
            )


class TestValidation:
    def test_weighting_must_be_nonnegative(self):
        with pytest.raises(ValueError):
            PhatWeighting(-np.ones((1, 2, 2)))

    def test_cross_spectra_must_be_square(self):
        with pytest.raises(ValueError):
            CrossSpectralTensor(np.zeros((2, 2, 3, 4), dtype=complex))

    def test_normalized_flag_checked(self):
        with pytest.raises(ValueError):
            SpatialPowerSpectrum(np.array([0.5, 0.25]), normalized=True)
