"""STFT magnitude, log-magnitude, mel filterbank and MFCC features.

Two routes compute the same features: plain numpy functions (used for
evaluation, plotting and as oracles) and ``*_tensor`` functions built from
differentiable tensor ops (used by the training losses).  Framing never
pads the signal: frames cover ``[0, N)`` and the frame count is
``1 + (N - window_len) // hop``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, LengthError
from .tensor import Tensor


@dataclass(frozen=True)
class StftConfig:
    fft_bins: int = 512
    hop: int = 100
    window_len: int = 400
    mel_bands: int = 40
    mfcc_dim: int = 13
    sample_rate: int = 16000
    log_floor: float = 1e-7

    def __post_init__(self):
        if self.window_len > self.fft_bins:
            raise ConfigError(f"window_len {self.window_len} exceeds fft_bins {self.fft_bins}")
        if self.hop < 1 or self.window_len < 1:
            raise ConfigError("hop and window_len must be >= 1")
        if self.mel_bands < self.mfcc_dim:
            raise ConfigError(f"mel_bands {self.mel_bands} < mfcc_dim {self.mfcc_dim}")
        if self.sample_rate <= 0 or self.log_floor <= 0:
            raise ConfigError("sample_rate and log_floor must be positive")

    @property
    def n_bins(self) -> int:
        return self.fft_bins // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window_len:
            raise LengthError(f"signal of {n_samples} samples is shorter than one window ({self.window_len})")
        return 1 + (n_samples - self.window_len) // self.hop


@dataclass
class SpectralFeatures:
    matrix: np.ndarray  # frames x bins (or frames x coefficients)
    kind: str  # magnitude | log_magnitude | mel | mfcc


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window of length ``n``."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _frames(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    F = cfg.n_frames(len(x))
    win = np.lib.stride_tricks.sliding_window_view(x, cfg.window_len)[::cfg.hop][:F]
    return win * hann_window(cfg.window_len)


def stft_magnitude(x, cfg: StftConfig) -> SpectralFeatures:
    frames = _frames(x, cfg)
    spec = np.fft.rfft(frames, n=cfg.fft_bins, axis=-1)
    return SpectralFeatures(np.abs(spec), "magnitude")


def log_magnitude(m: SpectralFeatures, log_floor: float = 1e-7) -> SpectralFeatures:
    if m.kind != "magnitude":
        raise ContractError(f"log_magnitude needs magnitude features, got {m.kind!r}")
    return SpectralFeatures(np.log(np.maximum(m.matrix, log_floor)), "log_magnitude")


@lru_cache(maxsize=16)
def mel_filter_matrix(cfg: StftConfig) -> np.ndarray:
    """Triangular mel filters (``mel_bands x n_bins``), 0 Hz to Nyquist."""
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(cfg.sample_rate / 2), cfg.mel_bands + 2))
    freqs = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.fft_bins
    lo, centre, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (centre - lo)
    falling = (hi - freqs) / (hi - centre)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if len(empty):
        raise ConfigError(f"mel filters {empty.tolist()} cover no FFT bin; use fewer mel_bands or more fft_bins")
    fb.setflags(write=False)
    return fb


def mel_centres(cfg: StftConfig) -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(cfg.sample_rate / 2), cfg.mel_bands + 2))[1:-1]


def mel_filterbank(m: SpectralFeatures, cfg: StftConfig) -> SpectralFeatures:
    """Mel-band energies of the power spectrum (magnitude squared)."""
    if m.kind != "magnitude":
        raise ContractError(f"mel_filterbank needs magnitude features, got {m.kind!r}")
    return SpectralFeatures((m.matrix ** 2) @ mel_filter_matrix(cfg).T, "mel")


@lru_cache(maxsize=16)
def dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Rows of the orthonormal DCT-II basis: ``n_out x n_in``."""
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    d = np.cos(np.pi * k * (2 * n + 1) / (2 * n_in)) * np.sqrt(2.0 / n_in)
    d[0] /= np.sqrt(2.0)
    d.setflags(write=False)
    return d


def mfcc(x, cfg: StftConfig) -> SpectralFeatures:
    mel = mel_filterbank(stft_magnitude(x, cfg), cfg).matrix
    logmel = np.log(np.maximum(mel, cfg.log_floor))
    return SpectralFeatures(logmel @ dct_matrix(cfg.mfcc_dim, cfg.mel_bands).T, "mfcc")


# ---------------------------------------------------------------------------
# differentiable route
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _dft_pair(cfg: StftConfig, dtype: str) -> tuple[np.ndarray, np.ndarray]:
    # Windowed real/imaginary DFT bases restricted to the first window_len
    # samples (the zero-padded tail contributes nothing).
    n = np.arange(cfg.window_len)[:, None]
    k = np.arange(cfg.n_bins)[None, :]
    ang = 2 * np.pi * n * k / cfg.fft_bins
    w = hann_window(cfg.window_len)[:, None]
    return (w * np.cos(ang)).astype(dtype), (-w * np.sin(ang)).astype(dtype)


def stft_magnitude_tensor(x: Tensor, cfg: StftConfig) -> Tensor:
    """|STFT| of ``x`` (``N`` or ``B x N``) as a ``B x frames x bins`` tensor."""
    if x.ndim == 1:
        x = T.reshape(x, (1, x.shape[0]))
    frames = T.frame(x, cfg.window_len, cfg.hop)
    cos_b, sin_b = _dft_pair(cfg, x.dtype.str)
    re = T.matmul(frames, Tensor(cos_b))
    im = T.matmul(frames, Tensor(sin_b))
    return T.hypot(re, im)


def log_magnitude_tensor(mag: Tensor, log_floor: float) -> Tensor:
    return T.log(T.clamp_min(mag, log_floor))


def mfcc_from_magnitude_tensor(mag: Tensor, cfg: StftConfig) -> Tensor:
    fb = Tensor(np.ascontiguousarray(mel_filter_matrix(cfg).T).astype(mag.dtype))
    dct = Tensor(np.ascontiguousarray(dct_matrix(cfg.mfcc_dim, cfg.mel_bands).T).astype(mag.dtype))
    mel = T.matmul(T.square(mag), fb)
    return T.matmul(T.log(T.clamp_min(mel, cfg.log_floor)), dct)


def mfcc_tensor(x: Tensor, cfg: StftConfig) -> Tensor:
    return mfcc_from_magnitude_tensor(stft_magnitude_tensor(x, cfg), cfg)


# ---------------------------------------------------------------------------
# spectrogram image
# ---------------------------------------------------------------------------

def spectrogram_image(x, cfg: StftConfig, floor_db: float = -80.0) -> np.ndarray:
    """uint8 image, rows = bins with low frequencies at the bottom, columns = frames.

    Magnitudes are in dB relative to the maximum, clipped to ``[floor_db, 0]``.
    """
    mag = stft_magnitude(x, cfg).matrix.T
    peak = mag.max()
    if peak <= 0:
        return np.zeros(mag.shape, dtype=np.uint8)
    db = 20 * np.log10(np.maximum(mag / peak, 1e-12))
    db = np.clip(db, floor_db, 0.0)
    img = np.round((db - floor_db) / -floor_db * 255.0).astype(np.uint8)
    return np.ascontiguousarray(img[::-1])


def write_pgm(image: np.ndarray, path) -> None:
    """Binary (P5) portable graymap."""
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    raw = open(path, "rb").read()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    pos += 1  # single whitespace byte before the raster
    if fields[0] != b"P5":
        raise ContractError(f"{path}: not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ContractError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(raw[pos:pos + w * h], dtype=np.uint8).reshape(h, w)
