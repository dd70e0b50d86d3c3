"""16-bit PCM WAV reading/writing plus resampling and length fitting."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, FormatError


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DimensionError(f"AudioClip is mono: expected 1-D samples, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ConfigError("AudioClip samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def read_wav(path) -> AudioClip:
    """Read a PCM 16-bit mono RIFF/WAVE file into [-1, 1) floats.

    Chunks other than ``fmt `` and ``data`` are skipped.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: file too short for a RIFF header")
    if raw[:4] != b"RIFF":
        raise FormatError(f"{path}: bad chunk id {raw[:4]!r} (expected b'RIFF')")
    if raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: bad format {raw[8:12]!r} (expected b'WAVE')")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4:pos + 8])
        body = raw[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"{path}: chunk {cid!r} truncated ({len(body)} of {size} bytes)")
        if cid == b"fmt ":
            if size < 16:
                raise FormatError(f"{path}: fmt chunk too small ({size} bytes)")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise FormatError(f"{path}: missing fmt chunk")
    if data is None:
        raise FormatError(f"{path}: missing data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if audio_format != 1:
        raise FormatError(f"{path}: audio_format={audio_format} is not PCM (1)")
    if channels != 1:
        raise FormatError(f"{path}: channels={channels}, only mono is supported")
    if bits != 16:
        raise FormatError(f"{path}: bits_per_sample={bits}, only 16-bit is supported")
    if rate == 0:
        raise FormatError(f"{path}: sample_rate=0")
    if len(data) % 2:
        raise FormatError(f"{path}: data chunk has odd byte count {len(data)}")
    pcm = np.frombuffer(data, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / 32768.0, rate)


def quantize(samples: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1] and round half away from zero to int16."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0) * 32768.0
    q = np.sign(x) * np.floor(np.abs(x) + 0.5)
    return np.clip(q, -32768, 32767).astype("<i2")


def write_wav(clip: AudioClip, path) -> None:
    """Write a canonical 44-byte-header PCM 16-bit mono WAV."""
    pcm = quantize(clip.samples).tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, clip.sample_rate, clip.sample_rate * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(pcm))
    with open(path, "wb") as fh:
        fh.write(header + pcm)


def resample_linear(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linear interpolation onto a ``target_rate`` grid.

    Output length is ``round(len * target / source)``; points past the last
    input sample hold its value.
    """
    if target_rate <= 0:
        raise ConfigError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    n_out = int(round(len(clip) * target_rate / clip.sample_rate))
    t = np.arange(n_out) * (clip.sample_rate / target_rate)
    src = np.arange(len(clip))
    out = np.interp(t, src, clip.samples) if len(clip) else np.zeros(n_out)
    return AudioClip(out, target_rate)


def fit_length(clip: AudioClip, seconds: float) -> AudioClip:
    """Truncate or zero-pad at the tail to ``round(seconds * sample_rate)`` samples."""
    if seconds <= 0:
        raise ConfigError(f"seconds must be positive, got {seconds}")
    n = int(round(seconds * clip.sample_rate))
    x = clip.samples[:n]
    if len(x) < n:
        x = np.concatenate([x, np.zeros(n - len(x))])
    return AudioClip(x.copy(), clip.sample_rate)
