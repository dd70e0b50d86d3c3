"""Paired clean/noisy corpus synthesis: radio-echo channel and additive noise.

The echo channel models a controller position that sums the sent speech
with its radio-returned copy: both paths get their own Gaussian noise floor
and the returned path arrives ``d`` samples late.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio_io import AudioClip, fit_length, read_wav, resample_linear, write_wav
from .errors import ConfigError, DegenerateInputError, LengthError

PEAK_LIMIT = 1.0
PEAK_TARGET = 0.9
MANIFEST_HEADER = ["index", "clean_path", "noisy_path", "mode", "delay_samples", "snr_db", "seed", "normalized"]


@dataclass(frozen=True)
class EchoParams:
    delay_ms_range: tuple[float, float] = (10.0, 200.0)
    sent_snr_db: float = 30.0
    received_snr_db: float = 10.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.delay_ms_range
        if lo < 0 or hi < lo:
            raise ConfigError(f"invalid delay range {self.delay_ms_range} ms")

    def delay_samples_range(self, sample_rate: int) -> tuple[int, int]:
        lo, hi = self.delay_ms_range
        return int(round(lo * sample_rate / 1000)), int(round(hi * sample_rate / 1000))


@dataclass(frozen=True)
class MixParams:
    snr_db: tuple[float, ...] = (-3.0, 0.0, 3.0, 6.0)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.snr_db, (int, float)):
            object.__setattr__(self, "snr_db", (float(self.snr_db),))
        if not self.snr_db:
            raise ConfigError("MixParams needs at least one SNR level")


def _power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x, dtype=np.float64)))


def gaussian_noise_at_snr(signal, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """White Gaussian noise whose realized power sits exactly ``snr_db`` below the signal's."""
    x = np.asarray(signal, dtype=np.float64)
    p_sig = _power(x)
    if p_sig <= 0:
        raise DegenerateInputError("cannot set an SNR relative to a silent signal")
    noise = rng.standard_normal(len(x))
    if np.isinf(snr_db) and snr_db > 0:
        return np.zeros_like(x)
    noise -= noise.mean()
    return noise * np.sqrt(p_sig / 10 ** (snr_db / 10) / _power(noise))


def _echo(clean: AudioClip, p: EchoParams, rng: np.random.Generator) -> tuple[AudioClip, int, bool]:
    x = clean.samples
    dmin, dmax = p.delay_samples_range(clean.sample_rate)
    if len(x) <= dmax:
        raise LengthError(f"clip of {len(x)} samples is not longer than the maximum delay ({dmax})")
    d = int(rng.integers(dmin, dmax + 1))
    sent = x + gaussian_noise_at_snr(x, p.sent_snr_db, rng)
    received = x + gaussian_noise_at_snr(x, p.received_snr_db, rng)
    noisy = sent.copy()
    noisy[d:] += received[:len(x) - d]
    peak = np.max(np.abs(noisy))
    normalized = bool(peak > PEAK_LIMIT)
    if normalized:
        noisy *= PEAK_TARGET / peak
    return AudioClip(noisy, clean.sample_rate), d, normalized


def simulate_echo(clean: AudioClip, p: EchoParams, rng: np.random.Generator) -> tuple[AudioClip, int]:
    """Sum of the sent path and the ``d``-sample delayed received path.

    Returns the noisy clip (length-aligned with ``clean``) and ``d``.
    """
    noisy, d, _ = _echo(clean, p, rng)
    return noisy, d


def mix_additive_noise(clean: AudioClip, noise: AudioClip, p: MixParams,
                       rng: np.random.Generator | None = None) -> AudioClip:
    """``clean + alpha * noise_segment`` at ``p.snr_db[0]`` dB.

    The noise segment starts at a random offset and wraps around when the
    noise clip is shorter than the clean one.
    """
    rng = rng if rng is not None else np.random.default_rng(p.seed)
    x = clean.samples
    nz = noise.samples
    if _power(x) <= 0:
        raise DegenerateInputError("clean signal is silent")
    if len(nz) == 0 or _power(nz) <= 0:
        raise DegenerateInputError("noise source is silent")
    start = int(rng.integers(0, len(nz)))
    seg = np.take(nz, np.arange(start, start + len(x)), mode="wrap")
    if _power(seg) <= 0:
        raise DegenerateInputError("selected noise segment is silent")
    alpha = noise_scale(x, seg, p.snr_db[0])
    return AudioClip(x + alpha * seg, clean.sample_rate)


def noise_scale(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    """alpha such that 10 log10(P_clean / P(alpha * noise)) == snr_db."""
    if np.isinf(snr_db) and snr_db > 0:
        return 0.0
    return float(np.sqrt(_power(clean) / (_power(noise) * 10 ** (snr_db / 10))))


# ---------------------------------------------------------------------------
# corpus files
# ---------------------------------------------------------------------------

@dataclass
class ManifestRow:
    index: int
    clean_path: str
    noisy_path: str
    mode: str
    delay_samples: int | None
    snr_db: float | None
    seed: int
    normalized: bool


@dataclass
class Manifest:
    path: Path
    rows: list[ManifestRow]

    def __len__(self) -> int:
        return len(self.rows)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.path.parent / p


def write_manifest(rows: Sequence[ManifestRow], path) -> Manifest:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_HEADER)
        for r in rows:
            w.writerow([r.index, r.clean_path, r.noisy_path, r.mode,
                        "" if r.delay_samples is None else r.delay_samples,
                        "" if r.snr_db is None else f"{r.snr_db:g}", r.seed, int(r.normalized)])
    return Manifest(path, list(rows))


def read_manifest(path) -> Manifest:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ConfigError(f"{path}: manifest header {header} != {MANIFEST_HEADER}")
        rows = []
        for rec in reader:
            if not rec:
                continue
            if len(rec) != len(MANIFEST_HEADER):
                raise ConfigError(f"{path}: malformed manifest row {rec}")
            rows.append(ManifestRow(int(rec[0]), rec[1], rec[2], rec[3],
                                    int(rec[4]) if rec[4] else None, float(rec[5]) if rec[5] else None,
                                    int(rec[6]), rec[7] == "1"))
    return Manifest(path, rows)


def _prepare(clip, sample_rate: int, seconds: float) -> AudioClip:
    if not isinstance(clip, AudioClip):
        clip = read_wav(clip)
    if clip.sample_rate != sample_rate:
        clip = resample_linear(clip, sample_rate)
    return fit_length(clip, seconds)


def synth_corpus(source_clips, out_dir, mode: str, params, noise_clips=None, seconds: float = 4.0,
                 sample_rate: int = 16000) -> Manifest:
    """Write ``clean/NNNN.wav``, ``noisy/NNNN.wav`` and ``manifest.csv`` under ``out_dir``.

    Pair ``i`` uses its own generator seeded with ``params.seed + i``.
    ``source_clips`` / ``noise_clips`` may be AudioClips or WAV paths; without
    noise clips the additive mode draws white Gaussian noise.
    """
    sources = list(source_clips)
    if not sources:
        raise ConfigError("no source clips given")
    if mode == "echo":
        if not isinstance(params, EchoParams):
            raise ConfigError("echo mode needs EchoParams")
    elif mode == "additive":
        if not isinstance(params, MixParams):
            raise ConfigError("additive mode needs MixParams")
    else:
        raise ConfigError(f"unknown mode {mode!r} (echo | additive)")
    noises = [n if isinstance(n, AudioClip) else read_wav(n) for n in (noise_clips or [])]
    noises = [resample_linear(n, sample_rate) if n.sample_rate != sample_rate else n for n in noises]

    out = Path(out_dir)
    (out / "clean").mkdir(parents=True, exist_ok=True)
    (out / "noisy").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, src in enumerate(sources):
        clean = _prepare(src, sample_rate, seconds)
        seed = params.seed + i
        rng = np.random.default_rng(seed)
        if mode == "echo":
            noisy, delay, normalized = _echo(clean, params, rng)
            snr = params.received_snr_db
        else:
            snr = float(params.snr_db[int(rng.integers(len(params.snr_db)))])
            if noises:
                noise = noises[int(rng.integers(len(noises)))]
            else:
                noise = AudioClip(rng.standard_normal(len(clean)), sample_rate)
            noisy = mix_additive_noise(clean, noise, MixParams((snr,), seed), rng)
            delay, normalized = None, False
            peak = np.max(np.abs(noisy.samples))
            if peak > PEAK_LIMIT:
                noisy = AudioClip(noisy.samples * (PEAK_TARGET / peak), sample_rate)
                normalized = True
        name = f"{i:04d}.wav"
        write_wav(clean, out / "clean" / name)
        write_wav(noisy, out / "noisy" / name)
        rows.append(ManifestRow(i, f"clean/{name}", f"noisy/{name}", mode, delay, snr, seed, normalized))
    return write_manifest(rows, out / "manifest.csv")


def load_pairs(manifest: Manifest) -> list[tuple[AudioClip, AudioClip]]:
    return [(read_wav(manifest.resolve(r.clean_path)), read_wav(manifest.resolve(r.noisy_path)))
            for r in manifest.rows]
