"""A small dense-tensor engine with reverse-mode automatic differentiation.

Only the operations needed by the enhancement network and its losses are
provided.  Every operation records a tape node holding its inputs and a
vector-Jacobian product (VJP) closure; :func:`backward` replays the tape in
reverse creation order.

Tensors hold rank-0 to rank-3 arrays.  Storage defaults to float32; float64
tensors are supported throughout so gradient checks can run on a 64-bit
shadow of the same computation.  Convolution-style ops accept either an
unbatched ``C x L`` operand or a batched ``B x C x L`` one.
"""
from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContractError, DimensionError, LengthError

_seq = itertools.count()
_grad_enabled = True
_branch_log: list | None = None


@contextmanager
def record_branches():
    """Collect the branch masks of piecewise ops (relu, abs, clamp_min).

    Finite-difference checks use this to detect probes that straddle a kink.
    """
    global _branch_log
    prev = _branch_log
    _branch_log = []
    try:
        yield _branch_log
    finally:
        _branch_log = prev


def _log_branch(mask: np.ndarray) -> None:
    if _branch_log is not None:
        _branch_log.append(mask)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_vjp", "_seq", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = np.float32
        arr = np.asarray(data, dtype=dtype)
        if arr.ndim > 3:
            raise DimensionError(f"tensors are limited to rank 3, got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple = ()
        self._vjp = None
        self._seq = next(_seq)
        self._consumed = False

    # -- conveniences -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else mul_scalar(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other) if isinstance(other, Tensor) else mul_scalar(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _node(data: np.ndarray, parents: Sequence[Tensor], vjp, op: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the tape.

    The tape is freed afterwards; calling backward again on the same graph
    raises :class:`ContractError`.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not on the tape (no input requires grad)")
    if loss._consumed:
        raise ContractError("backward already ran on this graph")

    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in nodes:
            continue
        if t._consumed:
            raise ContractError("graph shares nodes with an already back-propagated graph")
        nodes[id(t)] = t
        stack.extend(p for p in t._parents if p.requires_grad)

    order = sorted(nodes.values(), key=lambda t: t._seq, reverse=True)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in order:
        g = pending.pop(id(t), None)
        if g is None:
            continue
        t.grad = g if t.grad is None else t.grad + g
        if t._vjp is None:
            continue
        for p, pg in zip(t._parents, t._vjp(g)):
            if pg is None or not p.requires_grad:
                continue
            pg = np.asarray(pg, dtype=p.data.dtype)
            if pg.shape != p.data.shape:
                raise DimensionError(f"internal: VJP of {t.op} produced {pg.shape} for {p.data.shape}")
            k = id(p)
            pending[k] = pg if k not in pending else pending[k] + pg

    for t in order:
        if t._vjp is not None:
            t._vjp = None
            t._parents = ()
            t._consumed = True
    loss._consumed = True


# ---------------------------------------------------------------------------
# elementwise and broadcasting
# ---------------------------------------------------------------------------

def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    if len(a) != len(b):
        raise DimensionError(f"cannot broadcast {a} with {b}: ranks differ")
    out = []
    for x, y in zip(a, b):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise DimensionError(f"cannot broadcast {a} with {b}")
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True, dtype=np.float64).astype(g.dtype)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    out = a.data / b.data

    def vjp(g):
        gb = -g * out / b.data
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), vjp, "div")


def neg(x: Tensor) -> Tensor:
    return _node(-x.data, (x,), lambda g: (-g,), "neg")


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _node(x.data + x.dtype.type(c), (x,), lambda g: (g,), "add_scalar")


def mul_scalar(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return _node(x.data * c, (x,), lambda g: (g * c,), "mul_scalar")


def square(x: Tensor) -> Tensor:
    return _node(x.data * x.data, (x,), lambda g: (2 * g * x.data,), "square")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _log_branch(mask)
    return _node(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def _sigmoid(v: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    # tanh form: overflow-free and faster than scipy's expit
    out = np.multiply(v, 0.5, out=out)
    np.tanh(out, out=out)
    out *= 0.5
    out += 0.5
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _node(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _node(t, (x,), lambda g: (g * (1 - t * t),), "tanh")


def abs_(x: Tensor) -> Tensor:
    _log_branch(x.data > 0)
    return _node(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def log(x: Tensor) -> Tensor:
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); the gradient is zero wherever the floor is active."""
    mask = x.data > floor
    _log_branch(mask)
    out = np.where(mask, x.data, x.dtype.type(floor)).astype(x.dtype)
    return _node(out, (x,), lambda g: (g * mask,), "clamp_min")


def hypot(re: Tensor, im: Tensor) -> Tensor:
    """sqrt(re^2 + im^2) with a zero subgradient at the origin."""
    if re.shape != im.shape:
        raise DimensionError(f"hypot operands differ: {re.shape} vs {im.shape}")
    m = np.sqrt(re.data * re.data + im.data * im.data)

    def vjp(g):
        inv = np.divide(g, m, out=np.zeros_like(m), where=m > 0)
        return inv * re.data, inv * im.data

    return _node(m, (re, im), vjp, "hypot")


# ---------------------------------------------------------------------------
# reductions (accumulated in float64, stored in the operand dtype)
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims, dtype=np.float64).astype(x.dtype)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(np.asarray(out), (x,), vjp, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if n == 0:
        raise LengthError("mean over an empty axis")
    out = x.data.mean(axis=axes, keepdims=keepdims, dtype=np.float64).astype(x.dtype)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _node(np.asarray(out), (x,), vjp, "mean")


def frobenius_norm(x: Tensor, axis=None) -> Tensor:
    """sqrt(sum(x^2)) over ``axis``; zero subgradient where the norm vanishes."""
    axes = _norm_axes(axis, x.ndim)
    xd = x.data.astype(np.float64)
    n = np.sqrt((xd * xd).sum(axis=axes, keepdims=True))

    def vjp(g):
        g = np.reshape(g, n.shape)
        scale = np.divide(g, n, out=np.zeros_like(n), where=n > 0)
        return (scale * xd,)

    out = np.squeeze(n, axis=axes).astype(x.dtype)
    return _node(np.asarray(out), (x,), vjp, "frobenius_norm")


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the sequence (last) axis, keeping it as length 1."""
    if x.ndim < 2:
        raise DimensionError(f"global_avg_pool expects C x L or B x C x L, got {x.shape}")
    if x.shape[-1] == 0:
        raise LengthError("global_avg_pool over an empty sequence")
    return mean(x, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return _node(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (g.transpose(inv),), "transpose")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    if not xs:
        raise DimensionError("concat of nothing")
    nd = xs[0].ndim
    ax = axis % nd
    for t in xs[1:]:
        if t.ndim != nd or any(a != b for i, (a, b) in enumerate(zip(t.shape, xs[0].shape)) if i != ax):
            raise DimensionError(f"concat shapes incompatible: {[t.shape for t in xs]}")
    out = np.concatenate([t.data for t in xs], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in xs])

    def vjp(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(xs)))

    return _node(out, xs, vjp, "concat")


def crop_tail(x: Tensor, length: int) -> Tensor:
    """Keep the first ``length`` entries of the last axis."""
    if length > x.shape[-1] or length < 0:
        raise LengthError(f"cannot crop length {x.shape[-1]} to {length}")
    if length == x.shape[-1]:
        return x
    L = x.shape[-1]

    def vjp(g):
        pad = [(0, 0)] * (x.ndim - 1) + [(0, L - length)]
        return (np.pad(g, pad),)

    return _node(np.ascontiguousarray(x.data[..., :length]), (x,), vjp, "crop_tail")


def pad_tail(x: Tensor, extra: int) -> Tensor:
    """Append ``extra`` zeros along the last axis."""
    if extra < 0:
        raise LengthError("negative padding")
    if extra == 0:
        return x
    L = x.shape[-1]
    pad = [(0, 0)] * (x.ndim - 1) + [(0, extra)]
    return _node(np.pad(x.data, pad), (x,), lambda g: (np.ascontiguousarray(g[..., :L]),), "pad_tail")


def frame(x: Tensor, window: int, hop: int) -> Tensor:
    """Slice the last axis into overlapping frames: (..., N) -> (..., F, window).

    F = 1 + (N - window) // hop; samples past the last full frame are dropped.
    """
    N = x.shape[-1]
    if N < window:
        raise LengthError(f"signal of {N} samples is shorter than one window ({window})")
    if hop < 1:
        raise ConfigError("hop must be >= 1")
    F = 1 + (N - window) // hop
    out = np.ascontiguousarray(sliding_window_view(x.data, window, axis=-1)[..., ::hop, :][..., :F, :])

    def vjp(g):
        lead = g.shape[:-2]
        nchunk = -(-window // hop)
        total = (F + nchunk) * hop
        gx = np.zeros(lead + (total,), dtype=g.dtype)
        for j in range(nchunk):
            w = min(hop, window - j * hop)
            tgt = gx[..., j * hop:j * hop + F * hop].reshape(lead + (F, hop))
            tgt[..., :w] += g[..., j * hop:j * hop + w]
        return (np.ascontiguousarray(gx[..., :N]),)

    return _node(out, (x,), vjp, "frame")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; ``b`` may be rank 2 and shared across a batch."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")
    if b.ndim not in (2, a.ndim):
        raise DimensionError(f"matmul right operand must be rank 2 or match rank: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        if b.ndim < gb.ndim:
            gb = gb.sum(axis=tuple(range(gb.ndim - b.ndim)))
        if a.ndim < ga.ndim:
            ga = ga.sum(axis=tuple(range(ga.ndim - a.ndim)))
        return ga, gb

    return _node(out, (a, b), vjp, "matmul")


# ---------------------------------------------------------------------------
# convolutional layers
# ---------------------------------------------------------------------------

def _batched(x: np.ndarray, name: str):
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise DimensionError(f"{name} expects C x L or B x C x L input, got shape {x.shape}")


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Valid (unpadded) strided 1-D convolution.

    ``y[o, t] = b[o] + sum_{c,k} w[o, c, k] * x[c, t*stride + k]``
    """
    xd, squeeze = _batched(x.data, "conv1d")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if w.ndim != 3:
        raise DimensionError(f"conv1d weight must be Cout x Cin x K, got {w.shape}")
    B, Cin, Lin = xd.shape
    Cout, wc, K = w.shape
    if wc != Cin:
        raise DimensionError(f"conv1d weight expects {wc} input channels, input has {Cin}")
    if b.shape != (Cout,):
        raise DimensionError(f"conv1d bias must have shape ({Cout},), got {b.shape}")
    if Lin < K:
        raise LengthError(f"conv1d input length {Lin} shorter than kernel {K}")
    Lout = (Lin - K) // stride + 1
    W2 = w.data.reshape(Cout, Cin * K)
    pointwise = K == 1 and stride == 1
    if pointwise:
        cols = None
        y = np.matmul(W2, xd)
    else:
        win = sliding_window_view(xd, K, axis=2)[:, :, ::stride][:, :, :Lout]
        cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B, Lout, Cin * K)
        y = np.matmul(cols, W2.T).transpose(0, 2, 1)
    y = y + b.data[:, None]
    if squeeze:
        y = y[0]

    def vjp(g):
        gB = g[None] if squeeze else g
        gb = gB.sum(axis=(0, 2), dtype=np.float64)
        if pointwise:
            gW = np.tensordot(gB, xd, axes=([0, 2], [0, 2]))
            gx = np.matmul(W2.T, gB)
        else:
            gW = np.tensordot(gB, cols, axes=([0, 2], [0, 1]))
            gcols = np.matmul(gB.transpose(0, 2, 1), W2).reshape(B, Lout, Cin, K)
            gx = np.zeros_like(xd)
            span = stride * (Lout - 1) + 1
            for k in range(K):
                gx[:, :, k:k + span:stride] += gcols[:, :, :, k].transpose(0, 2, 1)
        if squeeze:
            gx = gx[0]
        return gx, gW.reshape(w.shape), gb

    return _node(np.ascontiguousarray(y), (x, w, b), vjp, "conv1d")


def conv_transpose1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Transposed 1-D convolution (the adjoint of :func:`conv1d`), plus bias.

    ``y[o, t*stride + k] += w[c, o, k] * x[c, t]``; output length is
    ``(Lin - 1) * stride + K``.
    """
    xd, squeeze = _batched(x.data, "conv_transpose1d")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if w.ndim != 3:
        raise DimensionError(f"conv_transpose1d weight must be Cin x Cout x K, got {w.shape}")
    B, Cin, Lin = xd.shape
    wc, Cout, K = w.shape
    if wc != Cin:
        raise DimensionError(f"conv_transpose1d weight expects {wc} input channels, input has {Cin}")
    if b.shape != (Cout,):
        raise DimensionError(f"conv_transpose1d bias must have shape ({Cout},), got {b.shape}")
    if Lin < 1:
        raise LengthError("conv_transpose1d input is empty")
    Lout = (Lin - 1) * stride + K
    W2 = w.data.reshape(Cin, Cout * K)
    span = stride * (Lin - 1) + 1
    pointwise = K == 1 and stride == 1
    if pointwise:
        y = np.matmul(W2.T, xd)
    else:
        z = np.matmul(xd.transpose(0, 2, 1), W2).reshape(B, Lin, Cout, K)
        y = np.zeros((B, Cout, Lout), dtype=np.result_type(xd, W2))
        for k in range(K):
            y[:, :, k:k + span:stride] += z[:, :, :, k].transpose(0, 2, 1)
    y = y + b.data[:, None]
    if squeeze:
        y = y[0]

    def vjp(g):
        gB = g[None] if squeeze else g
        gb = gB.sum(axis=(0, 2), dtype=np.float64)
        if pointwise:
            gx = np.matmul(W2, gB)
            gW = np.tensordot(xd, gB, axes=([0, 2], [0, 2]))
        else:
            gz = np.stack([gB[:, :, k:k + span:stride] for k in range(K)], axis=-1)
            gz = np.ascontiguousarray(gz.transpose(0, 2, 1, 3)).reshape(B, Lin, Cout * K)
            gx = np.matmul(gz, W2.T).transpose(0, 2, 1)
            gW = np.tensordot(xd, gz, axes=([0, 2], [0, 1]))
        if squeeze:
            gx = gx[0]
        return gx, gW.reshape(w.shape), gb

    return _node(np.ascontiguousarray(y), (x, w, b), vjp, "conv_transpose1d")


def glu(x: Tensor) -> Tensor:
    """Gated linear unit over the channel axis: first half * sigmoid(second half)."""
    if x.ndim < 2:
        raise DimensionError(f"glu expects C x L or B x C x L, got {x.shape}")
    C2 = x.shape[-2]
    if C2 % 2:
        raise DimensionError(f"glu needs an even channel count, got {C2}")
    C = C2 // 2
    a = x.data[..., :C, :]
    gate = _sigmoid(x.data[..., C:, :])

    def vjp(g):
        return (np.concatenate([g * gate, g * a * gate * (1 - gate)], axis=-2),)

    return _node(a * gate, (x,), vjp, "glu")


# ---------------------------------------------------------------------------
# bidirectional LSTM
# ---------------------------------------------------------------------------

def lstm_bidirectional(x: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> Tensor:
    """One bidirectional LSTM layer.

    x is ``L x Din`` (or ``B x L x Din``).  Weights stack both directions on
    the leading axis: ``w_ih`` is ``2 x 4H x Din``, ``w_hh`` is ``2 x 4H x H``
    and ``b`` is ``2 x 4H``; gate order is input, forget, candidate, output.
    Returns ``L x 2H`` with the forward direction first.
    """
    xd = x.data
    squeeze = xd.ndim == 2
    if squeeze:
        xd = xd[None]
    if xd.ndim != 3:
        raise DimensionError(f"lstm input must be L x Din or B x L x Din, got {x.shape}")
    B, L, Din = xd.shape
    if w_hh.ndim != 3 or w_hh.shape[0] != 2 or w_hh.shape[1] != 4 * w_hh.shape[2]:
        raise DimensionError(f"w_hh must be 2 x 4H x H, got {w_hh.shape}")
    H = w_hh.shape[2]
    if w_ih.shape != (2, 4 * H, Din):
        raise DimensionError(f"w_ih must be {(2, 4 * H, Din)}, got {w_ih.shape}")
    if b.shape != (2, 4 * H):
        raise DimensionError(f"lstm bias must be {(2, 4 * H)}, got {b.shape}")
    if L < 1:
        raise LengthError("lstm over an empty sequence")

    dt = np.result_type(xd, w_ih.data)
    Wih, Whh = w_ih.data, w_hh.data
    xw = np.matmul(xd[None], Wih.transpose(0, 2, 1)[:, None]) + b.data[:, None, None, :]
    xw[1] = xw[1][:, ::-1].copy()
    WhhT = np.ascontiguousarray(Whh.transpose(0, 2, 1))

    hs = np.zeros((2, B, L + 1, H), dtype=dt)
    cs = np.zeros((2, B, L + 1, H), dtype=dt)
    tcs = np.empty((2, B, L, H), dtype=dt)
    acts = np.empty((2, B, L, 4 * H), dtype=dt)
    for s in range(L):
        z = xw[:, :, s]
        z += np.matmul(hs[:, :, s], WhhT)
        a = acts[:, :, s]
        _sigmoid(z, out=a)
        np.tanh(z[..., 2 * H:3 * H], out=a[..., 2 * H:3 * H])
        c = cs[:, :, s + 1]
        np.multiply(a[..., H:2 * H], cs[:, :, s], out=c)
        c += a[..., :H] * a[..., 2 * H:3 * H]
        tc = tcs[:, :, s]
        np.tanh(c, out=tc)
        np.multiply(a[..., 3 * H:], tc, out=hs[:, :, s + 1])
    out = np.concatenate([hs[0, :, 1:], hs[1, :, 1:][:, ::-1]], axis=-1)
    if squeeze:
        out = out[0]

    def vjp(g):
        gB = g[None] if squeeze else g
        gh = np.stack([gB[..., :H], gB[..., H:][:, ::-1]])
        i, f, gg, o = acts[..., :H], acts[..., H:2 * H], acts[..., 2 * H:3 * H], acts[..., 3 * H:]
        # per-step factors that do not depend on the recurrence
        cell_gain = o * (1 - tcs * tcs)
        gates = np.empty((2, B, L, 3, H), dtype=dt)
        gates[..., 0, :] = gg * i * (1 - i)
        gates[..., 1, :] = cs[:, :, :L] * f * (1 - f)
        gates[..., 2, :] = i * (1 - gg * gg)
        out_gain = tcs * o * (1 - o)
        dz_all = np.empty((2, B, L, 4, H), dtype=dt)
        dh = np.zeros((2, B, H), dtype=dt)
        dc = np.zeros((2, B, H), dtype=dt)
        for s in range(L - 1, -1, -1):
            dh += gh[:, :, s]
            dc *= f[:, :, s + 1] if s + 1 < L else 0.0
            dc += dh * cell_gain[:, :, s]
            dz = dz_all[:, :, s]
            np.multiply(dc[:, :, None, :], gates[:, :, s], out=dz[:, :, :3])
            np.multiply(dh, out_gain[:, :, s], out=dz[:, :, 3])
            dh = np.matmul(dz.reshape(2, B, 4 * H), Whh)
        dz_all = dz_all.reshape(2, B, L, 4 * H)
        flat = dz_all.reshape(2, B * L, 4 * H)
        gWhh = np.matmul(flat.transpose(0, 2, 1), hs[:, :, :L].reshape(2, B * L, H))
        gb = dz_all.sum(axis=(1, 2), dtype=np.float64)
        dz_all[1] = dz_all[1][:, ::-1].copy()
        gx = np.matmul(dz_all, Wih[:, None]).sum(axis=0)
        gWih = np.matmul(dz_all.reshape(2, B * L, 4 * H).transpose(0, 2, 1), xd.reshape(1, B * L, Din))
        if squeeze:
            gx = gx[0]
        return gx, gWih, gWhh, gb

    return _node(np.ascontiguousarray(out), (x, w_ih, w_hh, b), vjp, "lstm_bidirectional")


def bilstm_forward(x: Tensor, params: Iterable[tuple[Tensor, Tensor, Tensor]], hidden: int,
                   layers: int) -> Tensor:
    """Stack of bidirectional LSTM layers; layer n consumes layer n-1's output.

    ``params`` yields one ``(w_ih, w_hh, b)`` triple per layer.
    """
    params = list(params)
    if layers < 1 or len(params) != layers:
        raise DimensionError(f"expected {layers} LSTM layer parameter sets, got {len(params)}")
    h = x
    for w_ih, w_hh, b in params:
        if w_hh.shape[-1] != hidden:
            raise DimensionError(f"LSTM hidden size {w_hh.shape[-1]} != {hidden}")
        h = lstm_bidirectional(h, w_ih, w_hh, b)
    return h
