"""Multi-objective loss terms, their identities and gradients."""
import numpy as np
import pytest

from rose_se import tensor as T
from rose_se.dsp import StftConfig, mfcc, stft_magnitude
from rose_se.errors import ConfigError, DimensionError
from rose_se.gradcheck import check_gradients
from rose_se.losses import LossConfig, mae_loss, sc_loss, stft_mag_loss, total_loss
from rose_se.tensor import Tensor

CFG = StftConfig()
SMALL = StftConfig(fft_bins=64, hop=16, window_len=48, mel_bands=8, mfcc_dim=6)


def rnd(n, seed):
    return np.random.default_rng(seed).standard_normal(n)


def f64(x):
    return Tensor(x, dtype=np.float64)


def sc_oracle(a, b):
    return np.linalg.norm(a - b) / (np.linalg.norm(a) + 1e-8)


class TestMae:
    def test_examples(self):
        assert mae_loss(f64(np.zeros(2)), f64(np.array([1.0, -1.0]))).item() == 1.0
        assert mae_loss(f64(np.ones(5)), f64(np.ones(5))).item() == 0.0

    def test_symmetric(self):
        a, b = rnd(100, 0), rnd(100, 1)
        assert mae_loss(f64(a), f64(b)).item() == mae_loss(f64(b), f64(a)).item()

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            mae_loss(f64(np.zeros(3)), f64(np.zeros(4)))


class TestMagLoss:
    def test_doubling_gives_ln2(self):
        s = rnd(4000, 2)
        np.testing.assert_allclose(stft_mag_loss(f64(s), f64(2 * s), CFG).item(), np.log(2), rtol=1e-6)

    def test_positive_when_different(self):
        assert stft_mag_loss(f64(rnd(1000, 3)), f64(rnd(1000, 4)), CFG).item() > 0

    def test_oracle(self):
        s, e = rnd(1500, 5), rnd(1500, 6)
        a = np.log(np.maximum(stft_magnitude(s, CFG).matrix, 1e-7))
        b = np.log(np.maximum(stft_magnitude(e, CFG).matrix, 1e-7))
        np.testing.assert_allclose(stft_mag_loss(f64(s), f64(e), CFG).item(), np.linalg.norm(a - b) / np.sqrt(a.size),
                                   rtol=1e-9)


class TestScLoss:
    def test_zero_estimate_is_one(self):
        s = rnd(2000, 7)
        np.testing.assert_allclose(sc_loss(f64(s), f64(np.zeros(2000)), "spectrogram", CFG).item(), 1.0, atol=1e-6)

    @pytest.mark.parametrize("kind", ["spectrogram", "mfcc"])
    def test_oracle(self, kind):
        s, e = rnd(1500, 8), rnd(1500, 9)
        feat = (lambda x: stft_magnitude(x, CFG).matrix) if kind == "spectrogram" else (lambda x: mfcc(x, CFG).matrix)
        np.testing.assert_allclose(sc_loss(f64(s), f64(e), kind, CFG).item(), sc_oracle(feat(s), feat(e)), rtol=1e-6)

    def test_scale_sensitive(self):
        s = rnd(1000, 10)
        assert sc_loss(f64(s), f64(1.5 * s), "spectrogram", CFG).item() > 0

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            sc_loss(f64(np.ones(500)), f64(np.ones(500)), "chroma", CFG)

    def test_batch_is_clip_mean(self):
        s, e = np.stack([rnd(900, 11), rnd(900, 12)]), np.stack([rnd(900, 13), rnd(900, 14)])
        each = [sc_loss(f64(s[i]), f64(e[i]), "spectrogram", CFG).item() for i in range(2)]
        np.testing.assert_allclose(sc_loss(f64(s), f64(e), "spectrogram", CFG).item(), np.mean(each), rtol=1e-12)


class TestTotal:
    def test_identity_all_zero(self):
        s = rnd(3000, 15)
        vals = total_loss(f64(s), f64(s), LossConfig()).as_floats()
        assert all(v == 0.0 for v in vals.values())

    def test_breakdown_arithmetic(self):
        s, e = rnd(2000, 16), rnd(2000, 17)
        b = total_loss(f64(s), f64(e), LossConfig(lambda_se=0.7, lambda_asr=1.3)).as_floats()
        np.testing.assert_allclose(b["se_total"], b["mae"] + b["mag"])
        np.testing.assert_allclose(b["asr_total"], b["spec"] + b["mfcc"])
        np.testing.assert_allclose(b["total"], 0.7 * b["se_total"] + 1.3 * b["asr_total"])
        assert all(v >= 0 for v in b.values())

    def test_lambda_asr_zero(self):
        s, e = rnd(2000, 18), rnd(2000, 19)
        b = total_loss(f64(s), f64(e), LossConfig(lambda_asr=0.0)).as_floats()
        assert b["total"] == b["se_total"]

    def test_invalid_lambdas(self):
        with pytest.raises(ConfigError):
            LossConfig(lambda_se=0, lambda_asr=0)
        with pytest.raises(ConfigError):
            LossConfig(lambda_se=-1)

    def test_silent_reference_flagged(self):
        b = total_loss(f64(np.zeros(1000)), f64(rnd(1000, 20)), LossConfig())
        assert b.degenerate and np.isfinite(b.total.item())


class TestGradients:
    @pytest.mark.parametrize("term", ["mae", "mag", "spec", "mfcc", "total"])
    def test_finite_differences(self, term):
        s = rnd(1000, 21)
        lc = LossConfig(stft=SMALL)

        def fn(t):
            return getattr(total_loss(Tensor(s, dtype=np.float64), t[0], lc), term)

        res = check_gradients(fn, [rnd(1000, 22)], step=1e-3, max_entries=40)
        assert res.passed(1e-3), res
