"""STFT, log-magnitude, mel filterbank, MFCC and the spectrogram image."""
import numpy as np
import pytest

from rose_se import dsp
from rose_se.dsp import StftConfig, SpectralFeatures
from rose_se.errors import ConfigError, ContractError, LengthError
from rose_se.tensor import Tensor

CFG = StftConfig()


def stft_oracle(x, cfg):
    """Frame-by-frame reference: explicit window, explicit DFT sum."""
    n = np.arange(cfg.window_len)
    win = 0.5 - 0.5 * np.cos(2 * np.pi * n / cfg.window_len)
    k = np.arange(cfg.n_bins)
    basis = np.exp(-2j * np.pi * np.outer(n, k) / cfg.fft_bins)
    frames = []
    start = 0
    while start + cfg.window_len <= len(x):
        frames.append(np.abs((win * x[start:start + cfg.window_len]) @ basis))
        start += cfg.hop
    return np.array(frames)


class TestStft:
    def test_frame_count_example(self):
        assert CFG.n_frames(64000) == 637

    def test_frame_count_property(self):
        rng = np.random.default_rng(0)
        for n in rng.integers(400, 3000, 30):
            assert dsp.stft_magnitude(np.zeros(n), CFG).matrix.shape == (1 + (n - 400) // 100, 257)

    def test_too_short(self):
        with pytest.raises(LengthError):
            dsp.stft_magnitude(np.zeros(399), CFG)

    def test_zero_signal(self):
        assert not np.any(dsp.stft_magnitude(np.zeros(1000), CFG).matrix)

    def test_matches_direct_dft(self):
        x = np.random.default_rng(1).standard_normal(900)
        np.testing.assert_allclose(dsp.stft_magnitude(x, CFG).matrix, stft_oracle(x, CFG), rtol=1e-9, atol=1e-9)

    def test_bin_centred_tone_peak(self):
        k = 37
        x = np.sin(2 * np.pi * k * 16000 / 512 * np.arange(4000) / 16000)
        np.testing.assert_array_equal(np.argmax(dsp.stft_magnitude(x, CFG).matrix, axis=1), k)

    def test_parseval_per_frame(self):
        x = np.random.default_rng(2).standard_normal(1200)
        full = np.fft.fft(dsp._frames(x, CFG), n=CFG.fft_bins, axis=-1)
        lhs = np.sum(np.abs(full) ** 2, axis=1) / CFG.fft_bins
        rhs = np.sum(dsp._frames(x, CFG) ** 2, axis=1)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-4)

    def test_tensor_route_matches_numpy(self):
        x = np.random.default_rng(3).standard_normal((2, 1000))
        mag = dsp.stft_magnitude_tensor(Tensor(x, dtype=np.float64), CFG).data
        for i in range(2):
            np.testing.assert_allclose(mag[i], dsp.stft_magnitude(x[i], CFG).matrix, rtol=1e-9, atol=1e-9)


class TestLogMagnitude:
    def test_values(self):
        out = dsp.log_magnitude(SpectralFeatures(np.array([[1.0, 0.0]]), "magnitude")).matrix
        np.testing.assert_allclose(out, [[0.0, np.log(1e-7)]])

    def test_monotone(self):
        m1 = np.random.default_rng(4).uniform(0, 1, (5, 7))
        m2 = m1 + np.random.default_rng(5).uniform(0, 1, (5, 7))
        a = dsp.log_magnitude(SpectralFeatures(m1, "magnitude")).matrix
        b = dsp.log_magnitude(SpectralFeatures(m2, "magnitude")).matrix
        assert np.all(a <= b)

    def test_wrong_kind(self):
        with pytest.raises(ContractError):
            dsp.log_magnitude(SpectralFeatures(np.ones((1, 1)), "mfcc"))


class TestMel:
    def test_filters_nonnegative_with_positive_rows(self):
        fb = dsp.mel_filter_matrix(CFG)
        assert fb.shape == (40, 257)
        assert np.all(fb >= 0) and np.all(fb.sum(axis=1) > 0)

    def test_centres_follow_mel_formula(self):
        mel_max = 2595 * np.log10(1 + 8000 / 700)
        expected = 700 * (10 ** (np.linspace(0, mel_max, 42)[1:-1] / 2595) - 1)
        np.testing.assert_allclose(dsp.mel_centres(CFG), expected, rtol=1e-12)
        assert np.all(np.diff(dsp.mel_centres(CFG)) > 0)
        # each filter's peak bin lies within one bin of its centre frequency
        peaks = np.argmax(dsp.mel_filter_matrix(CFG), axis=1) * 16000 / 512
        assert np.all(np.abs(peaks - expected) <= 16000 / 512)

    def test_zero_spectrum(self):
        mel = dsp.mel_filterbank(SpectralFeatures(np.zeros((3, 257)), "magnitude"), CFG).matrix
        assert not np.any(mel)

    def test_config_rejects_more_coefficients_than_bands(self):
        with pytest.raises(ConfigError):
            StftConfig(mel_bands=10, mfcc_dim=13)


class TestMfcc:
    def test_shape(self):
        assert dsp.mfcc(np.random.default_rng(0).standard_normal(2000), CFG).matrix.shape == (17, 13)

    def test_zero_signal_constant_log_mel(self):
        c = dsp.mfcc(np.zeros(1000), CFG).matrix
        # orthonormal DCT of a constant vector v*1 is sqrt(M)*v in c0 only
        np.testing.assert_allclose(c[:, 0], np.sqrt(40) * np.log(1e-7), rtol=1e-12)
        np.testing.assert_allclose(c[:, 1:], 0.0, atol=1e-9)

    def test_matches_step_by_step_reference(self):
        x = np.random.default_rng(6).standard_normal(1600)
        power = stft_oracle(x, CFG) ** 2
        fb = dsp.mel_filter_matrix(CFG)
        logmel = np.log(np.maximum(power @ fb.T, 1e-7))
        M = 40
        ref = np.array([[np.sqrt((1 if k == 0 else 2) / M) *
                         np.sum(row * np.cos(np.pi * k * (2 * np.arange(M) + 1) / (2 * M))) for k in range(13)]
                        for row in logmel])
        np.testing.assert_allclose(dsp.mfcc(x, CFG).matrix, ref, rtol=1e-9, atol=1e-9)

    def test_noise_and_tone_differ_most_in_low_order(self):
        t = np.arange(1600) / 16000
        tone = 0.5 * np.sin(2 * np.pi * 1000 * t)
        noise = 0.5 * np.random.default_rng(7).standard_normal(1600)
        diff = np.abs(dsp.mfcc(tone, CFG).matrix - dsp.mfcc(noise, CFG).matrix).mean(axis=0)
        assert np.argmax(diff) < 4

    def test_tensor_route_matches_numpy(self):
        x = np.random.default_rng(8).standard_normal(1000)
        np.testing.assert_allclose(dsp.mfcc_tensor(Tensor(x, dtype=np.float64), CFG).data[0],
                                   dsp.mfcc(x, CFG).matrix, rtol=1e-8, atol=1e-8)

    def test_dct_orthonormal(self):
        d = dsp.dct_matrix(40, 40)
        np.testing.assert_allclose(d @ d.T, np.eye(40), atol=1e-12)


class TestSpectrogramImage:
    def test_tone_ridge_row(self, tmp_path):
        x = np.sin(2 * np.pi * 1000 * np.arange(8000) / 16000)
        img = dsp.spectrogram_image(x, CFG)
        p = tmp_path / "s.pgm"
        dsp.write_pgm(img, p)
        back = dsp.read_pgm(p)
        np.testing.assert_array_equal(back, img)
        k = round(1000 * 512 / 16000)
        # low frequencies at the bottom: bin k sits at row (n_bins - 1 - k)
        np.testing.assert_array_equal(np.argmax(back, axis=0), 256 - k)

    def test_silence_is_black(self):
        assert not np.any(dsp.spectrogram_image(np.zeros(800), CFG))
