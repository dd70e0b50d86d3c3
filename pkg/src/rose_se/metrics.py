"""Objective metrics for clean/enhanced pairs: SI-SDR, segmental SNR, LSD and STOI.

SI-SDR and STOI are reference-directional: the first argument is always
the clean reference.  Segmental SNR is directional too (the error power is
symmetric but the reference power is not); LSD is symmetric.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import gcd

import numpy as np
from scipy.signal import resample_poly

from .dsp import StftConfig, stft_magnitude
from .errors import DegenerateInputError, DimensionError, LengthError

SI_SDR_CAP_DB = 100.0
SEG_SNR_RANGE_DB = (-10.0, 35.0)
EPS = np.finfo(np.float64).eps


def _pair(ref, est) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape or ref.ndim != 1:
        raise DimensionError(f"reference {ref.shape} and estimate {est.shape} must be equal-length 1-D signals")
    return ref, est


def si_sdr(ref, est) -> float:
    """Scale-invariant SDR in dB, clamped to +-100 dB."""
    ref, est = _pair(ref, est)
    energy = float(ref @ ref)
    if energy <= 0:
        raise DegenerateInputError("SI-SDR reference is silent")
    target = (float(est @ ref) / energy) * ref
    residual = est - target
    num, den = float(target @ target), float(residual @ residual)
    if den <= 0:
        return SI_SDR_CAP_DB
    if num <= 0:
        return -SI_SDR_CAP_DB
    return float(np.clip(10 * np.log10(num / den), -SI_SDR_CAP_DB, SI_SDR_CAP_DB))


def segmental_snr(ref, est, frame: int = 256, hop: int = 128) -> float:
    """Mean per-frame SNR with each frame clamped to [-10, 35] dB."""
    ref, est = _pair(ref, est)
    if len(ref) < frame:
        raise LengthError(f"segmental SNR needs at least {frame} samples, got {len(ref)}")
    n = 1 + (len(ref) - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(n)[:, None]
    p_ref = np.sum(ref[idx] ** 2, axis=1)
    p_err = np.sum((ref[idx] - est[idx]) ** 2, axis=1)
    lo, hi = SEG_SNR_RANGE_DB
    with np.errstate(divide="ignore"):
        snr = np.where(p_err > 0, 10 * np.log10(np.maximum(p_ref, 1e-300) / np.where(p_err > 0, p_err, 1.0)), hi)
    return float(np.mean(np.clip(snr, lo, hi)))


def log_spectral_distance(ref, est, cfg: StftConfig | None = None) -> float:
    """Mean over frames of the RMS (over bins) dB difference of floored STFT magnitudes."""
    ref, est = _pair(ref, est)
    cfg = cfg or StftConfig()
    a = np.log(np.maximum(stft_magnitude(ref, cfg).matrix, cfg.log_floor))
    b = np.log(np.maximum(stft_magnitude(est, cfg).matrix, cfg.log_floor))
    d = (20.0 / np.log(10.0)) * (a - b)
    return float(np.mean(np.sqrt(np.mean(d * d, axis=1))))


# ---------------------------------------------------------------------------
# STOI
# ---------------------------------------------------------------------------

STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30
STOI_BETA_DB = -15.0
STOI_DYN_RANGE_DB = 40.0


def third_octave_bands(fs: int = STOI_FS, nfft: int = STOI_NFFT, num_bands: int = STOI_BANDS,
                       min_freq: float = STOI_MIN_FREQ) -> tuple[np.ndarray, np.ndarray]:
    """Binary one-third-octave band matrix (bands x bins) and centre frequencies."""
    f = np.linspace(0, fs, nfft + 1)[:nfft // 2 + 1]
    k = np.arange(num_bands, dtype=np.float64)
    cf = 2.0 ** (k / 3) * min_freq
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((num_bands, len(f)))
    for i in range(num_bands):
        a = int(np.argmin((f - lo[i]) ** 2))
        b = int(np.argmin((f - hi[i]) ** 2))
        obm[i, a:b] = 1.0
    return obm, cf


def _stoi_window(n: int) -> np.ndarray:
    return np.hanning(n + 2)[1:-1]


def _frame_starts(n: int, framelen: int, hop: int) -> range:
    return range(0, n - framelen, hop)


def _remove_silent_frames(x: np.ndarray, y: np.ndarray, dyn_range: float, framelen: int, hop: int):
    w = _stoi_window(framelen)
    starts = list(_frame_starts(len(x), framelen, hop))
    if not starts:
        return x[:0], y[:0]
    xf = np.array([w * x[i:i + framelen] for i in starts])
    yf = np.array([w * y[i:i + framelen] for i in starts])
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + EPS)
    keep = (np.max(energy) - dyn_range - energy) < 0
    xf, yf = xf[keep], yf[keep]
    n = (len(xf) - 1) * hop + framelen if len(xf) else 0
    xs, ys = np.zeros(n), np.zeros(n)
    for j in range(len(xf)):
        xs[j * hop:j * hop + framelen] += xf[j]
        ys[j * hop:j * hop + framelen] += yf[j]
    return xs, ys


def _stoi_stft(x: np.ndarray) -> np.ndarray:
    w = _stoi_window(STOI_FRAME)
    hop = STOI_FRAME // 2
    frames = [np.fft.rfft(w * x[i:i + STOI_FRAME], n=STOI_NFFT) for i in _frame_starts(len(x), STOI_FRAME, hop)]
    return np.array(frames).reshape(-1, STOI_NFFT // 2 + 1)


def _to_stoi_rate(x: np.ndarray, fs: int) -> np.ndarray:
    if fs == STOI_FS:
        return x
    g = gcd(STOI_FS, fs)
    return resample_poly(x, STOI_FS // g, fs // g)


def stoi(ref, est, sample_rate: int = 16000) -> float:
    """Short-time objective intelligibility of ``est`` against clean ``ref``."""
    ref, est = _pair(ref, est)
    x = _to_stoi_rate(ref, sample_rate)
    y = _to_stoi_rate(est, sample_rate)
    x, y = _remove_silent_frames(x, y, STOI_DYN_RANGE_DB, STOI_FRAME, STOI_FRAME // 2)
    xs, ys = _stoi_stft(x), _stoi_stft(y)
    if xs.shape[0] < STOI_SEGMENT:
        raise LengthError(f"STOI needs {STOI_SEGMENT} active frames (384 ms); got {xs.shape[0]}")
    obm, _ = third_octave_bands()
    x_tob = np.sqrt(obm @ (np.abs(xs) ** 2).T)
    y_tob = np.sqrt(obm @ (np.abs(ys) ** 2).T)
    starts = range(STOI_SEGMENT, x_tob.shape[1] + 1)
    xseg = np.array([x_tob[:, m - STOI_SEGMENT:m] for m in starts])
    yseg = np.array([y_tob[:, m - STOI_SEGMENT:m] for m in starts])
    scale = np.linalg.norm(xseg, axis=2, keepdims=True) / (np.linalg.norm(yseg, axis=2, keepdims=True) + EPS)
    clip = 10 ** (-STOI_BETA_DB / 20)
    yp = np.minimum(yseg * scale, xseg * (1 + clip))
    yp = yp - yp.mean(axis=2, keepdims=True)
    xc = xseg - xseg.mean(axis=2, keepdims=True)
    yp /= np.linalg.norm(yp, axis=2, keepdims=True) + EPS
    xc /= np.linalg.norm(xc, axis=2, keepdims=True) + EPS
    return float(np.sum(yp * xc) / (xc.shape[0] * xc.shape[1]))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

REPORT_HEADER = ["clip", "si_sdr_db", "seg_snr_db", "lsd", "stoi"]


@dataclass
class ClipMetrics:
    clip: str
    si_sdr_db: float
    seg_snr_db: float
    lsd: float
    stoi: float


@dataclass
class MetricReport:
    clips: list[ClipMetrics] = field(default_factory=list)

    def mean(self) -> ClipMetrics:
        if not self.clips:
            raise LengthError("empty report")
        cols = {k: float(np.mean([getattr(c, k) for c in self.clips])) for k in REPORT_HEADER[1:]}
        cols["stoi"] = float(np.mean([min(max(c.stoi, 0.0), 1.0) for c in self.clips]))
        return ClipMetrics("MEAN", **cols)

    def write(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_HEADER)
            for c in self.clips + [self.mean()]:
                w.writerow([c.clip] + [f"{getattr(c, k):.6f}" for k in REPORT_HEADER[1:]])


def evaluate_pair(name: str, ref, est, sample_rate: int = 16000, cfg: StftConfig | None = None) -> ClipMetrics:
    return ClipMetrics(name, si_sdr(ref, est), segmental_snr(ref, est), log_spectral_distance(ref, est, cfg),
                       stoi(ref, est, sample_rate))
