"""Echo channel, additive mixer and corpus files."""
import numpy as np
import pytest

from rose_se.audio_io import AudioClip, read_wav
from rose_se.echo_sim import (EchoParams, MixParams, gaussian_noise_at_snr, mix_additive_noise, noise_scale,
                              read_manifest, simulate_echo, synth_corpus)
from rose_se.errors import ConfigError, DegenerateInputError, LengthError
from rose_se.synthetic import speech_like


def power(x):
    return float(np.mean(np.square(x)))


def snr_db(sig, noise):
    return 10 * np.log10(power(sig) / power(noise))


def recover_delay(noisy, clean, min_sep=40):
    """Lags of the two largest cross-correlation peaks; the non-zero one is d."""
    n = len(clean)
    xc = np.fft.irfft(np.fft.rfft(noisy, 2 * n) * np.conj(np.fft.rfft(clean, 2 * n)))[:n]
    first = int(np.argmax(xc))
    masked = xc.copy()
    masked[max(0, first - min_sep):first + min_sep + 1] = -np.inf
    second = int(np.argmax(masked))
    return sorted([first, second])


CLEAN = speech_like(1.0, seed=3)


class TestGaussianNoise:
    def test_zero_db(self):
        x = CLEAN.samples
        n = gaussian_noise_at_snr(x, 0.0, np.random.default_rng(0))
        assert abs(snr_db(x, n)) < 0.5

    def test_high_snr_scale(self):
        x = CLEAN.samples
        n = gaussian_noise_at_snr(x, 100.0, np.random.default_rng(0))
        # the realized ratio is exact, so 100 dB sits on the 1e-10 boundary
        np.testing.assert_allclose(power(n) / power(x), 1e-10, rtol=1e-9)
        assert power(gaussian_noise_at_snr(x, 101.0, np.random.default_rng(0))) < 1e-10 * power(x)

    def test_seed_determinism(self):
        a = gaussian_noise_at_snr(CLEAN.samples, 10, np.random.default_rng(5))
        b = gaussian_noise_at_snr(CLEAN.samples, 10, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_silent(self):
        with pytest.raises(DegenerateInputError):
            gaussian_noise_at_snr(np.zeros(100), 10, np.random.default_rng(0))


class TestSimulateEcho:
    def test_zero_delay_no_noise(self):
        clip = AudioClip(0.3 * np.sin(np.arange(400) / 7), 16000)
        p = EchoParams(delay_ms_range=(0, 0), sent_snr_db=np.inf, received_snr_db=np.inf)
        noisy, d = simulate_echo(clip, p, np.random.default_rng(0))
        assert d == 0
        np.testing.assert_allclose(noisy.samples, 2 * clip.samples)

    def test_components_reconstruct_output(self):
        # replay the generator: delay first, then the sent floor, then the received floor
        p = EchoParams()
        x = CLEAN.samples
        noisy, d = simulate_echo(CLEAN, p, np.random.default_rng(11))
        rng = np.random.default_rng(11)
        assert int(rng.integers(160, 3201)) == d
        sent = x + gaussian_noise_at_snr(x, 30, rng)
        received = x + gaussian_noise_at_snr(x, 10, rng)
        ref = sent.copy()
        ref[d:] += received[:-d]
        if np.max(np.abs(ref)) > 1.0:
            ref *= 0.9 / np.max(np.abs(ref))
        np.testing.assert_allclose(noisy.samples, ref, atol=1e-12)

    def test_delay_range_samples(self):
        ds = [simulate_echo(CLEAN, EchoParams(), np.random.default_rng(s))[1] for s in range(50)]
        assert min(ds) >= 160 and max(ds) <= 3200

    def test_recovered_by_cross_correlation(self):
        for s in range(20):
            noisy, d = simulate_echo(CLEAN, EchoParams(), np.random.default_rng(s))
            assert recover_delay(noisy.samples, CLEAN.samples) == [0, d]

    def test_peak_normalization(self):
        loud = AudioClip(0.9 * np.sign(np.sin(np.arange(8000) / 50)), 16000)
        noisy, _ = simulate_echo(loud, EchoParams(), np.random.default_rng(0))
        np.testing.assert_allclose(np.max(np.abs(noisy.samples)), 0.9)

    def test_length_aligned(self):
        noisy, _ = simulate_echo(CLEAN, EchoParams(), np.random.default_rng(0))
        assert len(noisy) == len(CLEAN)

    def test_clip_shorter_than_delay(self):
        with pytest.raises(LengthError):
            simulate_echo(AudioClip(np.ones(3000), 16000), EchoParams(), np.random.default_rng(0))

    def test_invalid_range(self):
        with pytest.raises(ConfigError):
            EchoParams(delay_ms_range=(200, 10))


class TestAdditive:
    def test_six_db(self):
        noise = AudioClip(np.random.default_rng(1).standard_normal(5000), 16000)
        noisy = mix_additive_noise(CLEAN, noise, MixParams(snr_db=(6.0,)), np.random.default_rng(2))
        assert abs(snr_db(CLEAN.samples, noisy.samples - CLEAN.samples) - 6.0) < 0.5

    def test_alpha_monotone(self):
        x, n = CLEAN.samples, np.random.default_rng(1).standard_normal(16000)
        assert noise_scale(x, n, -3) > noise_scale(x, n, 6) > 0
        assert noise_scale(x, n, np.inf) == 0.0

    def test_deterministic(self):
        noise = AudioClip(np.random.default_rng(1).standard_normal(5000), 16000)
        a = mix_additive_noise(CLEAN, noise, MixParams(seed=4))
        b = mix_additive_noise(CLEAN, noise, MixParams(seed=4))
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_silent_noise(self):
        with pytest.raises(DegenerateInputError):
            mix_additive_noise(CLEAN, AudioClip(np.zeros(100), 16000), MixParams())


class TestCorpus:
    def test_echo_corpus(self, tmp_path):
        sources = [speech_like(0.5, seed=i) for i in range(3)]
        m = synth_corpus(sources, tmp_path / "c", "echo", EchoParams(seed=9), seconds=0.5)
        assert len(m) == 3
        back = read_manifest(tmp_path / "c" / "manifest.csv")
        assert [r.seed for r in back.rows] == [9, 10, 11]
        assert all(160 <= r.delay_samples <= 3200 for r in back.rows)
        for r in back.rows:
            c, n = read_wav(back.resolve(r.clean_path)), read_wav(back.resolve(r.noisy_path))
            assert len(c) == len(n) == 8000 and c.sample_rate == 16000

    def test_rerun_byte_identical(self, tmp_path):
        sources = [speech_like(0.5, seed=i) for i in range(2)]
        synth_corpus(sources, tmp_path / "a", "additive", MixParams(seed=1), seconds=0.5)
        synth_corpus(sources, tmp_path / "b", "additive", MixParams(seed=1), seconds=0.5)
        for sub in ("clean", "noisy"):
            for f in (tmp_path / "a" / sub).iterdir():
                assert f.read_bytes() == (tmp_path / "b" / sub / f.name).read_bytes()

    def test_additive_snr_from_levels(self, tmp_path):
        m = synth_corpus([speech_like(0.5, seed=i) for i in range(6)], tmp_path, "additive", MixParams(), seconds=0.5)
        assert {r.snr_db for r in m.rows} <= {-3.0, 0.0, 3.0, 6.0}
        assert all(r.delay_samples is None for r in m.rows)

    def test_empty_sources(self, tmp_path):
        with pytest.raises(ConfigError):
            synth_corpus([], tmp_path, "echo", EchoParams())

    def test_mode_param_mismatch(self, tmp_path):
        with pytest.raises(ConfigError):
            synth_corpus([CLEAN], tmp_path, "echo", MixParams())
