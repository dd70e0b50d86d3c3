"""Adam training loop, config files, binary checkpoints and corpus evaluation."""
from __future__ import annotations

import dataclasses
import logging
import os
import struct
import tempfile
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .audio_io import AudioClip, fit_length, resample_linear
from .dsp import StftConfig
from .echo_sim import load_pairs, read_manifest
from .errors import ConfigError, FormatError, NumericAbort
from .losses import LossConfig, total_loss
from .metrics import MetricReport, evaluate_pair
from .model import ModelConfig, ModelWeights, rose_forward
from .tensor import Tensor

log = logging.getLogger(__name__)

MAGIC = b"ROSE"
FORMAT_VERSION = 1
LOG_HEADER = "step,epoch,lr,mae,mag,spec,mfcc,total"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    lr_decay: float = 0.999
    batch_size: int = 64
    epochs: int = 1
    steps: int = 0  # > 0: stop after this many optimizer steps, ignoring epochs
    seed: int = 0
    clip_seconds: float = 4.0
    sample_rate: int = 16000
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must be in (0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0 or self.steps < 0:
            raise ConfigError("epochs and steps must be non-negative")
        if self.clip_seconds <= 0:
            raise ConfigError("clip_seconds must be positive")
        if self.loss.stft.sample_rate != self.sample_rate:
            raise ConfigError("STFT sample rate must equal the training sample rate")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Desk-scale profile: H=16, depth 3, batch 4, 1 s clips."""
        base = dict(batch_size=4, clip_seconds=1.0, model=ModelConfig(depth=3, hidden=16))
        base.update(overrides)
        return cls(**base)

    def lr_at_epoch(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** epoch

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# key = value config files
# ---------------------------------------------------------------------------

_TRAIN_KEYS = ["lr", "lr_decay", "batch_size", "epochs", "steps", "seed", "clip_seconds", "sample_rate"]
_LOSS_KEYS = ["lambda_se", "lambda_asr", "eps_denominator"]
_STFT_KEYS = ["fft_bins", "hop", "window_len", "mel_bands", "mfcc_dim", "log_floor"]
_MODEL_KEYS = [f.name for f in dataclasses.fields(ModelConfig)]
CONFIG_KEYS = _TRAIN_KEYS + _LOSS_KEYS + _STFT_KEYS + _MODEL_KEYS


def config_to_text(cfg: TrainConfig) -> str:
    vals = {k: getattr(cfg, k) for k in _TRAIN_KEYS}
    vals.update({k: getattr(cfg.loss, k) for k in _LOSS_KEYS})
    vals.update({k: getattr(cfg.loss.stft, k) for k in _STFT_KEYS})
    vals.update({k: getattr(cfg.model, k) for k in _MODEL_KEYS})
    return "".join(f"{k} = {vals[k]!r}\n" for k in CONFIG_KEYS)


def _convert(key: str, raw: str, like):
    try:
        if isinstance(like, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(like, int):
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def config_from_text(text: str) -> TrainConfig:
    """Parse ``key = value`` lines; unspecified keys keep their defaults."""
    defaults = TrainConfig()
    like = {k: getattr(defaults, k) for k in _TRAIN_KEYS}
    like.update({k: getattr(defaults.loss, k) for k in _LOSS_KEYS})
    like.update({k: getattr(defaults.loss.stft, k) for k in _STFT_KEYS})
    like.update({k: getattr(defaults.model, k) for k in _MODEL_KEYS})
    vals = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in like:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in vals:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        vals[key] = _convert(key, raw, like[key])
    merged = {**like, **vals}
    stft = StftConfig(sample_rate=merged["sample_rate"], **{k: merged[k] for k in _STFT_KEYS})
    loss = LossConfig(stft=stft, **{k: merged[k] for k in _LOSS_KEYS})
    model = ModelConfig(**{k: merged[k] for k in _MODEL_KEYS})
    return TrainConfig(loss=loss, model=model, **{k: merged[k] for k in _TRAIN_KEYS})


def load_config(path) -> TrainConfig:
    return config_from_text(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update applied in place to the arrays in ``params``.

    ``grads`` maps the same names to gradient arrays (missing means zero).
    Every gradient is checked before anything is touched, so a non-finite
    one aborts the whole step.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ConfigError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericAbort(f"non-finite gradient for parameter {name!r} at step {state.step + 1}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.dtype)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    config: TrainConfig
    step: int
    weights: ModelWeights
    adam: AdamState
    version: int = FORMAT_VERSION


def _record(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    out = struct.pack("<I", len(nb)) + nb + struct.pack("<B", arr.ndim)
    out += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return out + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    text = config_to_text(ckpt.config).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", ckpt.version, ckpt.step), struct.pack("<I", len(text)), text]
    for name, t in ckpt.weights.items():
        parts.append(_record(name, t.data))
    for name, t in ckpt.weights.items():
        parts.append(_record(f"adam.m/{name}", ckpt.adam.m.get(name, np.zeros_like(t.data))))
    for name, t in ckpt.weights.items():
        parts.append(_record(f"adam.v/{name}", ckpt.adam.v.get(name, np.zeros_like(t.data))))
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write atomically (temporary file in the same directory, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(checkpoint_bytes(ckpt))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} (expected {MAGIC!r})")
    if len(raw) < 20:
        raise FormatError(f"{path}: truncated header")
    version, step = struct.unpack("<IQ", raw[4:16])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version} (expected {FORMAT_VERSION})")
    (tlen,) = struct.unpack("<I", raw[16:20])
    pos = 20 + tlen
    if pos > len(raw):
        raise FormatError(f"{path}: truncated config text")
    try:
        cfg = config_from_text(raw[20:pos].decode("utf-8"))
    except (UnicodeDecodeError, ConfigError) as exc:
        raise FormatError(f"{path}: bad config text: {exc}") from None

    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    while pos < len(raw):
        if pos + 4 > len(raw):
            raise FormatError(f"{path}: truncated record header at byte {pos}")
        (nlen,) = struct.unpack("<I", raw[pos:pos + 4])
        pos += 4
        if pos + nlen + 1 > len(raw):
            raise FormatError(f"{path}: truncated record name at byte {pos}")
        name = raw[pos:pos + nlen].decode("utf-8")
        rank = raw[pos + nlen]
        pos += nlen + 1
        if pos + 4 * rank > len(raw):
            raise FormatError(f"{path}: truncated dims for {name!r}")
        dims = struct.unpack(f"<{rank}I", raw[pos:pos + 4 * rank])
        pos += 4 * rank
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        if pos + nbytes > len(raw):
            raise FormatError(f"{path}: truncated payload for {name!r}")
        arrays[name] = np.frombuffer(raw[pos:pos + nbytes], dtype="<f4").reshape(dims).astype(np.float32)
        pos += nbytes

    params = OrderedDict((n, Tensor(a, requires_grad=True)) for n, a in arrays.items() if not n.startswith("adam."))
    try:
        weights = ModelWeights(cfg.model, params)
    except Exception as exc:
        raise FormatError(f"{path}: weights do not match stored config: {exc}") from None
    adam = AdamState(step=step)
    for name in weights:
        for key, store in (("m", adam.m), ("v", adam.v)):
            rec = arrays.get(f"adam.{key}/{name}")
            if rec is None:
                raise FormatError(f"{path}: missing Adam moment adam.{key}/{name}")
            store[name] = rec.copy()
    return Checkpoint(cfg, step, weights, adam, version)


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------

def load_training_arrays(manifest_path, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """(clean, noisy) float32 arrays of shape pairs x samples, resampled and length-fitted."""
    pairs = load_pairs(read_manifest(manifest_path))
    if not pairs:
        raise ConfigError(f"{manifest_path}: manifest has no pairs")

    def prep(c: AudioClip) -> np.ndarray:
        if c.sample_rate != cfg.sample_rate:
            c = resample_linear(c, cfg.sample_rate)
        return fit_length(c, cfg.clip_seconds).samples.astype(np.float32)

    return np.stack([prep(c) for c, _ in pairs]), np.stack([prep(n) for _, n in pairs])


def train_arrays(cfg: TrainConfig, clean: np.ndarray, noisy: np.ndarray, out_path=None, log_path=None,
                 on_step: Callable[[dict], None] | None = None) -> tuple[Checkpoint, list[dict]]:
    """Optimise a freshly initialised model on in-memory pairs."""
    weights = ModelWeights.init(cfg.model, seed=cfg.seed)
    adam = AdamState()
    rng = np.random.default_rng([cfg.seed, 1])
    n = len(clean)
    total_steps = cfg.steps if cfg.steps > 0 else cfg.epochs * -(-n // cfg.batch_size)
    history: list[dict] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    if log_fh:
        log_fh.write(LOG_HEADER + "\n")
    ckpt = Checkpoint(cfg, 0, weights, adam)
    step = epoch = 0
    try:
        while step < total_steps:
            lr = cfg.lr_at_epoch(epoch)
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                if step >= total_steps:
                    break
                idx = order[start:start + cfg.batch_size]
                est = rose_forward(Tensor(noisy[idx]), cfg.model, weights)
                parts = total_loss(Tensor(clean[idx]), est, cfg.loss)
                vals = parts.as_floats()
                if not all(np.isfinite(v) for v in vals.values()):
                    raise NumericAbort(f"non-finite loss at step {step + 1} (epoch {epoch}) on clips {idx.tolist()}: {vals}")
                T.backward(parts.total)
                grads = {k: t.grad for k, t in weights.items()}
                try:
                    adam_step({k: t.data for k, t in weights.items()}, grads, adam, lr)
                except NumericAbort as exc:
                    raise NumericAbort(f"{exc} (epoch {epoch}, clips {idx.tolist()})") from None
                weights.zero_grad()
                step += 1
                row = {"step": step, "epoch": epoch, "lr": lr, **vals}
                history.append(row)
                if log_fh:
                    log_fh.write(f"{step},{epoch},{lr:.9g},{vals['mae']:.9g},{vals['mag']:.9g},"
                                 f"{vals['spec']:.9g},{vals['mfcc']:.9g},{vals['total']:.9g}\n")
                if on_step:
                    on_step(row)
            epoch += 1
            ckpt = Checkpoint(cfg, step, weights, adam)
            if out_path:
                save_checkpoint(ckpt, out_path)
    finally:
        if log_fh:
            log_fh.close()
    ckpt = Checkpoint(cfg, step, weights, adam)
    if out_path:
        save_checkpoint(ckpt, out_path)
    return ckpt, history


def train(cfg: TrainConfig, manifest_path, out_path=None, log_path=None,
          on_step: Callable[[dict], None] | None = None) -> tuple[Checkpoint, list[dict]]:
    """Train on the pairs listed in a corpus manifest; see :func:`train_arrays`."""
    clean, noisy = load_training_arrays(manifest_path, cfg)
    log.info("training on %d pairs of %d samples", len(clean), clean.shape[1])
    return train_arrays(cfg, clean, noisy, out_path, log_path, on_step)


def enhance_samples(weights: ModelWeights, samples: np.ndarray) -> np.ndarray:
    """Run the model without recording a tape; output has the input's length."""
    x = np.asarray(samples, dtype=next(iter(weights.params.values())).dtype)
    with T.no_grad():
        return rose_forward(Tensor(x), weights.config, weights).data.astype(np.float64)


def enhance(ckpt: Checkpoint, clip: AudioClip) -> AudioClip:
    return AudioClip(enhance_samples(ckpt.weights, clip.samples), clip.sample_rate)


def evaluate(ckpt: Checkpoint, manifest_path, report_path=None) -> MetricReport:
    """Enhance every noisy clip of a manifest and score it against its clean pair."""
    manifest = read_manifest(manifest_path)
    report = MetricReport()
    for row, (clean, noisy) in zip(manifest.rows, load_pairs(manifest)):
        est = enhance(ckpt, noisy)
        report.clips.append(evaluate_pair(Path(row.noisy_path).stem, clean.samples, est.samples,
                                          clean.sample_rate, ckpt.config.loss.stft))
    if report_path:
        report.write(report_path)
    return report
