"""Time-domain U-Net enhancer with channel/sequence attention and gated skips.

Encoder level ``i`` maps ``C_{i-1} -> C_i = hidden * growth**i`` channels
(``C_{-1} = 1``) with a strided convolution, ReLU, a pointwise convolution
to ``2 C_i`` channels, a GLU and a channel/sequence attention block.  A
stack of bidirectional LSTMs sits at the bottleneck.  Each decoder level
first fuses the matching encoder output into the incoming decoder feature
through an attention gate, then applies pointwise conv, GLU, transposed
convolution and ReLU (no ReLU on the final, single-channel output).
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 5
    hidden: int = 48
    kernel: int = 8
    stride: int = 4
    growth: int = 2
    squeeze: int = 2
    lstm_layers: int = 2
    lstm_hidden: int = 0  # 0 means "bottleneck channel count"

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.hidden < 1 or self.growth < 1 or self.lstm_layers < 1:
            raise ConfigError("hidden, growth and lstm_layers must be >= 1")
        if self.stride < 1 or self.kernel < self.stride:
            raise ConfigError(f"need kernel >= stride >= 1, got kernel={self.kernel}, stride={self.stride}")
        if self.squeeze < 1:
            raise ConfigError("squeeze must be >= 1")
        for i in range(self.depth):
            if self.channels(i) % self.squeeze:
                raise ConfigError(f"channels {self.channels(i)} at level {i} not divisible by squeeze {self.squeeze}")

    def channels(self, level: int) -> int:
        return 1 if level < 0 else self.hidden * self.growth ** level

    @property
    def bottleneck(self) -> int:
        return self.channels(self.depth - 1)

    @property
    def lstm_size(self) -> int:
        return self.lstm_hidden or self.bottleneck

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _parameter_shapes(cfg: ModelConfig) -> list[tuple[str, tuple, int]]:
    """(name, shape, fan_in) for every parameter, in initialisation order."""
    K = cfg.kernel
    out = []

    def conv(name, cout, cin, k):
        out.append((f"{name}.w", (cout, cin, k), cin * k))
        out.append((f"{name}.b", (cout,), cin * k))

    for i in range(cfg.depth):
        cin, c = cfg.channels(i - 1), cfg.channels(i)
        conv(f"enc.{i}.conv", c, cin, K)
        conv(f"enc.{i}.pw", 2 * c, c, 1)
        conv(f"enc.{i}.csatt.squeeze", c // cfg.squeeze, c, 1)
        conv(f"enc.{i}.csatt.excite", c, c // cfg.squeeze, 1)
        conv(f"enc.{i}.csatt.seq", 1, c, 1)
    H = cfg.lstm_size
    din = cfg.bottleneck
    for n in range(cfg.lstm_layers):
        out.append((f"lstm.{n}.w_ih", (2, 4 * H, din), din))
        out.append((f"lstm.{n}.w_hh", (2, 4 * H, H), H))
        out.append((f"lstm.{n}.b", (2, 4 * H), H))
        din = 2 * H
    conv("lstm.proj", cfg.bottleneck, 2 * H, 1)
    for i in reversed(range(cfg.depth)):
        c = cfg.channels(i)
        conv(f"dec.{i}.absf.enc", c, c, 1)
        conv(f"dec.{i}.absf.dec", c, c, 1)
        conv(f"dec.{i}.absf.att", c, c, 1)
        conv(f"dec.{i}.pw", 2 * c, c, 1)
        cdown = cfg.channels(i - 1)
        # transposed-conv weights are Cin x Cout x K; fan-in follows Cout * K
        out.append((f"dec.{i}.convtr.w", (c, cdown, K), cdown * K))
        out.append((f"dec.{i}.convtr.b", (cdown,), cdown * K))
    return out


class ModelWeights:
    """Named parameter map for a given :class:`ModelConfig`."""

    def __init__(self, config: ModelConfig, params: "OrderedDict[str, Tensor]"):
        self.config = config
        expected = [(n, s) for n, s, _ in _parameter_shapes(config)]
        got = [(n, t.shape) for n, t in params.items()]
        if sorted(expected) != sorted(got):
            missing = sorted(set(expected) - set(got))
            extra = sorted(set(got) - set(expected))
            raise DimensionError(f"weights do not match config; missing={missing[:3]} unexpected={extra[:3]}")
        self.params = OrderedDict((n, params[n]) for n, _ in expected)

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0, dtype=np.float32) -> "ModelWeights":
        """Uniform(+-1/sqrt(fan_in)) for everything; LSTM forget-gate biases start at 1."""
        rng = np.random.default_rng(seed)
        params = OrderedDict()
        H = config.lstm_size
        for name, shape, fan_in in _parameter_shapes(config):
            bound = 1.0 / np.sqrt(fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
            if name.startswith("lstm.") and name.endswith(".b") and arr.ndim == 2:
                arr[:, H:2 * H] = 1.0
            params[name] = Tensor(arr.astype(dtype), requires_grad=True)
        return cls(config, params)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def parameter_count(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights(self.config, OrderedDict(
            (n, Tensor(t.data.astype(dtype), requires_grad=True)) for n, t in self.params.items()))

    def copy(self) -> "ModelWeights":
        return self.astype(next(iter(self.params.values())).dtype)


def _pw(x: Tensor, w: ModelWeights, name: str) -> Tensor:
    return T.conv1d(x, w[f"{name}.w"], w[f"{name}.b"], 1)


def csatt_forward(x: Tensor, r: int, w: ModelWeights, prefix: str) -> Tensor:
    """Channel weights from squeeze/excite on the pooled input plus per-frame sequence weights."""
    C = x.shape[-2]
    if C % r:
        raise ConfigError(f"channel count {C} not divisible by squeeze factor {r}")
    if w[f"{prefix}.squeeze.w"].shape[:2] != (C // r, C):
        raise DimensionError(f"{prefix}: squeeze weights do not match {C} channels with r={r}")
    pooled = T.global_avg_pool(x)
    w_c = T.sigmoid(_pw(T.relu(_pw(pooled, w, f"{prefix}.squeeze")), w, f"{prefix}.excite"))
    w_l = T.sigmoid(_pw(x, w, f"{prefix}.seq"))
    return T.add(T.mul(x, w_c), T.mul(x, w_l))


def absf_fuse(enc: Tensor, dec: Tensor, w: ModelWeights, prefix: str) -> Tensor:
    """``dec + enc * sigmoid(psi_a(sigmoid(psi_e(enc) + psi_d(dec))))``.

    A one-sample length mismatch is resolved by cropping the longer operand
    at the tail.
    """
    if enc.shape[:-1] != dec.shape[:-1]:
        raise DimensionError(f"{prefix}: encoder {enc.shape} and decoder {dec.shape} channels differ")
    L = min(enc.shape[-1], dec.shape[-1])
    enc, dec = T.crop_tail(enc, L), T.crop_tail(dec, L)
    b = T.sigmoid(T.add(_pw(enc, w, f"{prefix}.enc"), _pw(dec, w, f"{prefix}.dec")))
    a = T.sigmoid(_pw(b, w, f"{prefix}.att"))
    return T.add(dec, T.mul(enc, a))


def encoder_block_forward(x: Tensor, layer: int, w: ModelWeights) -> Tensor:
    cfg = w.config
    p = f"enc.{layer}"
    h = T.relu(T.conv1d(x, w[f"{p}.conv.w"], w[f"{p}.conv.b"], cfg.stride))
    h = T.glu(_pw(h, w, f"{p}.pw"))
    return csatt_forward(h, cfg.squeeze, w, f"{p}.csatt")


def decoder_block_forward(x: Tensor, layer: int, w: ModelWeights) -> Tensor:
    cfg = w.config
    p = f"dec.{layer}"
    if x.shape[-2] != cfg.channels(layer):
        raise DimensionError(f"decoder level {layer} expects {cfg.channels(layer)} channels, got {x.shape[-2]}")
    h = T.glu(_pw(x, w, f"{p}.pw"))
    h = T.conv_transpose1d(h, w[f"{p}.convtr.w"], w[f"{p}.convtr.b"], cfg.stride)
    return h if layer == 0 else T.relu(h)


def bottleneck_forward(x: Tensor, w: ModelWeights) -> Tensor:
    cfg = w.config
    seq = T.transpose(x, (0, 2, 1)) if x.ndim == 3 else T.transpose(x, (1, 0))
    params = [(w[f"lstm.{n}.w_ih"], w[f"lstm.{n}.w_hh"], w[f"lstm.{n}.b"]) for n in range(cfg.lstm_layers)]
    h = T.bilstm_forward(seq, params, cfg.lstm_size, cfg.lstm_layers)
    h = T.transpose(h, (0, 2, 1)) if h.ndim == 3 else T.transpose(h, (1, 0))
    return _pw(h, w, "lstm.proj")


def level_lengths(n: int, cfg: ModelConfig) -> list[int]:
    """Sequence lengths entering each encoder level plus the bottleneck length."""
    lengths = [n]
    for _ in range(cfg.depth):
        lengths.append((lengths[-1] - cfg.kernel) // cfg.stride + 1)
    return lengths


def padded_length(n: int, cfg: ModelConfig) -> int:
    """Smallest L >= n whose encoder lengths all telescope exactly.

    Working back from a bottleneck length m >= 1 via L = (m - 1) * S + K
    gives L_0(m) = S**depth * (m - 1) + L_0(1).
    """
    base = 1
    for _ in range(cfg.depth):
        base = (base - 1) * cfg.stride + cfg.kernel
    step = cfg.stride ** cfg.depth
    m = max(1, -(-(n - base) // step) + 1)
    return step * (m - 1) + base


def rose_forward(x, cfg: ModelConfig, w: ModelWeights) -> Tensor:
    """Enhance waveform(s) ``x`` (``N`` or ``B x N``); output has the input's shape."""
    if w.config != cfg:
        raise ConfigError("weights were built for a different ModelConfig")
    if not isinstance(x, Tensor):
        dtype = next(iter(w.params.values())).dtype
        x = Tensor(np.asarray(x, dtype=dtype))
    single = x.ndim == 1
    if x.ndim not in (1, 2):
        raise DimensionError(f"waveform must be N or B x N, got {x.shape}")
    n = x.shape[-1]
    if n < 1:
        raise DimensionError("empty waveform")
    h = T.reshape(x, (1, 1, n) if single else (x.shape[0], 1, n))
    h = T.pad_tail(h, padded_length(n, cfg) - n)
    skips = []
    for i in range(cfg.depth):
        h = encoder_block_forward(h, i, w)
        skips.append(h)
    h = bottleneck_forward(h, w)
    for i in reversed(range(cfg.depth)):
        h = absf_fuse(skips[i], h, w, f"dec.{i}.absf")
        h = decoder_block_forward(h, i, w)
    h = T.crop_tail(h, n)
    return T.reshape(h, (n,) if single else (x.shape[0], n))
