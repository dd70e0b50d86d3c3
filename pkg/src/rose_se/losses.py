"""Multi-objective enhancement loss.

The speech-enhancement part compares waveforms (mean absolute error) and
log STFT magnitudes; the recognition part is spectral convergence on the
magnitude spectrogram and on MFCCs.  All terms accept a single waveform
(``N``) or a batch (``B x N``); batched terms are averaged over clips.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .dsp import StftConfig, log_magnitude_tensor, mfcc_from_magnitude_tensor, stft_magnitude_tensor
from .errors import ConfigError, DimensionError
from .tensor import Tensor


@dataclass(frozen=True)
class LossConfig:
    lambda_se: float = 1.0
    lambda_asr: float = 1.0
    stft: StftConfig = field(default_factory=StftConfig)
    eps_denominator: float = 1e-8

    def __post_init__(self):
        if self.lambda_se < 0 or self.lambda_asr < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.lambda_se == 0 and self.lambda_asr == 0:
            raise ConfigError("lambda_se and lambda_asr cannot both be zero")
        if self.eps_denominator <= 0:
            raise ConfigError("eps_denominator must be positive")


@dataclass
class LossBreakdown:
    mae: Tensor
    mag: Tensor
    spec: Tensor
    mfcc: Tensor
    se_total: Tensor
    asr_total: Tensor
    total: Tensor
    degenerate: bool = False

    def as_floats(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in ("mae", "mag", "spec", "mfcc", "se_total", "asr_total", "total")}


def _as_batch(x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    if x.ndim == 1:
        return T.reshape(x, (1, x.shape[0]))
    if x.ndim != 2:
        raise DimensionError(f"waveforms must be N or B x N, got {x.shape}")
    return x


def _pair(s, s_hat) -> tuple[Tensor, Tensor]:
    s, s_hat = _as_batch(s), _as_batch(s_hat)
    if s.shape != s_hat.shape:
        raise DimensionError(f"clean {s.shape} and estimate {s_hat.shape} differ in shape")
    if s.dtype != s_hat.dtype:
        s = Tensor(s.data.astype(s_hat.dtype))
    return s, s_hat


def mae_loss(s, s_hat) -> Tensor:
    s, s_hat = _pair(s, s_hat)
    return T.mean(T.abs_(T.sub(s, s_hat)))


def _log_mag_distance(mag_s: Tensor, mag_e: Tensor, log_floor: float) -> Tensor:
    diff = T.sub(log_magnitude_tensor(mag_s, log_floor), log_magnitude_tensor(mag_e, log_floor))
    n = diff.shape[1] * diff.shape[2]
    return T.mul_scalar(T.mean(T.frobenius_norm(diff, axis=(1, 2))), 1.0 / np.sqrt(n))


def _spectral_convergence(ref: Tensor, est: Tensor, eps: float) -> tuple[Tensor, bool]:
    num = T.frobenius_norm(T.sub(ref, est), axis=(1, 2))
    den = T.frobenius_norm(ref, axis=(1, 2))
    degenerate = bool(np.any(den.data <= eps))
    return T.mean(T.div(num, T.add_scalar(den, eps))), degenerate


def stft_mag_loss(s, s_hat, cfg: StftConfig) -> Tensor:
    """RMS over frames x bins of the log-magnitude difference."""
    s, s_hat = _pair(s, s_hat)
    return _log_mag_distance(stft_magnitude_tensor(s, cfg), stft_magnitude_tensor(s_hat, cfg), cfg.log_floor)


def sc_loss(s, s_hat, feature_kind: str, cfg: StftConfig, eps_denominator: float = 1e-8) -> Tensor:
    """Spectral convergence ``|D(s) - D(s_hat)|_F / (|D(s)|_F + eps)``."""
    s, s_hat = _pair(s, s_hat)
    ms, me = stft_magnitude_tensor(s, cfg), stft_magnitude_tensor(s_hat, cfg)
    if feature_kind == "spectrogram":
        return _spectral_convergence(ms, me, eps_denominator)[0]
    if feature_kind == "mfcc":
        return _spectral_convergence(mfcc_from_magnitude_tensor(ms, cfg), mfcc_from_magnitude_tensor(me, cfg),
                                     eps_denominator)[0]
    raise ConfigError(f"unknown feature kind {feature_kind!r} (spectrogram | mfcc)")


def total_loss(s, s_hat, cfg: LossConfig) -> LossBreakdown:
    s, s_hat = _pair(s, s_hat)
    st = cfg.stft
    ms, me = stft_magnitude_tensor(s, st), stft_magnitude_tensor(s_hat, st)
    mae = T.mean(T.abs_(T.sub(s, s_hat)))
    mag = _log_mag_distance(ms, me, st.log_floor)
    spec, deg1 = _spectral_convergence(ms, me, cfg.eps_denominator)
    mf, deg2 = _spectral_convergence(mfcc_from_magnitude_tensor(ms, st), mfcc_from_magnitude_tensor(me, st),
                                     cfg.eps_denominator)
    se = T.add(mae, mag)
    asr = T.add(spec, mf)
    total = T.add(T.mul_scalar(se, cfg.lambda_se), T.mul_scalar(asr, cfg.lambda_asr))
    return LossBreakdown(mae, mag, spec, mf, se, asr, total, degenerate=deg1 or deg2)
