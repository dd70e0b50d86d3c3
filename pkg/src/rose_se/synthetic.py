"""Speech-like synthetic source clips for desk-scale experiments.

A clip is a run of overlapping "syllables": voiced ones are gliding
harmonic tones shaped by three formant resonances over a gentle spectral
tilt, unvoiced ones are band-limited noise.  Syllables overlap and the
amplitude envelope never drops below a floor, so every STFT bin of every
frame carries deterministic content well above the faint noise bed.
"""
from __future__ import annotations

import numpy as np

from .audio_io import AudioClip

TILT_FLOOR = 0.08
ENVELOPE_FLOOR = 0.25
BED_LEVEL = 1e-3


def _formant_gain(freqs: np.ndarray, formants, bandwidths) -> np.ndarray:
    g = np.zeros_like(freqs)
    for f, bw in zip(formants, bandwidths):
        g += 1.0 / (1.0 + ((freqs - f) / bw) ** 2)
    return g + TILT_FLOOR


def _voiced(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    f0_start, f0_end = rng.uniform(90, 240, size=2)
    f0 = np.linspace(f0_start, f0_end, n) * (1 + 0.02 * np.sin(2 * np.pi * rng.uniform(3, 6) * np.arange(n) / sr))
    phase = 2 * np.pi * np.cumsum(f0) / sr
    formants = np.sort(rng.uniform([300, 900, 2200], [850, 2300, 3400]))
    bandwidths = rng.uniform([60, 90, 120], [120, 180, 250])
    out = np.zeros(n)
    mean_f0 = f0.mean()
    for h in range(1, int((sr / 2 - 200) / mean_f0) + 1):
        gain = _formant_gain(np.array([h * mean_f0]), formants, bandwidths)[0] / h ** 0.5
        out += gain * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    return out


def _unvoiced(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1 / sr)
    centre = rng.uniform(2500, min(6000, sr / 2 - 500))
    spec *= np.exp(-0.5 * ((freqs - centre) / rng.uniform(400, 1200)) ** 2)
    return np.fft.irfft(spec, n=n)


def speech_like(seconds: float, sample_rate: int = 16000, seed: int = 0, peak: float = 0.5) -> AudioClip:
    """Deterministic speech-like clip of ``seconds`` duration."""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sample_rate))
    out = np.zeros(n)
    pos = -int(rng.uniform(0.0, 0.05) * sample_rate)
    while pos < n:
        seg = int(rng.uniform(0.08, 0.25) * sample_rate)
        lo, hi = max(pos, 0), min(pos + seg, n)
        if hi - lo >= 16:
            t = np.arange(lo - pos, hi - pos)
            env = ENVELOPE_FLOOR + (1 - ENVELOPE_FLOOR) * np.sin(np.pi * t / seg) ** 0.7
            body = _voiced(hi - lo, sample_rate, rng) if rng.random() < 0.75 else _unvoiced(hi - lo, sample_rate, rng)
            body /= np.max(np.abs(body)) + 1e-12
            out[lo:hi] += rng.uniform(0.4, 1.0) * env * body
        # consecutive syllables overlap by 10-40 ms
        pos += seg - int(rng.uniform(0.01, 0.04) * sample_rate)
    out /= np.max(np.abs(out)) + 1e-12
    out += BED_LEVEL * rng.standard_normal(n)
    out *= peak / np.max(np.abs(out))
    return AudioClip(out, sample_rate)
