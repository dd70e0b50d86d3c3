"""Finite-difference verification of autodiff gradients.

Derivatives use the fourth-order central stencil
``(f(x-2h) - 8 f(x-h) + 8 f(x+h) - f(x+2h)) / 12h`` by default.  The plain
two-point stencil's ``h**2`` truncation error is large next to log
nonlinearities at small STFT magnitudes; ``order=2`` selects it anyway.

Piecewise-linear ops (relu, abs, clamp_min) make central differences
unreliable when a probe of size ``step`` pushes one of their inputs across
the kink.  The checker records every such op's branch mask during the
probe evaluations; a coordinate whose probes took different branches is not a valid finite-difference sample and is skipped
(and counted) rather than compared.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, record_branches


STENCILS = {
    2: ((-1, 1), (-0.5, 0.5)),
    4: ((-2, -1, 1, 2), (1 / 12, -8 / 12, 8 / 12, -1 / 12)),
}


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max-norm relative error ``|a - b|_inf / max(|a|_inf, |b|_inf, tiny)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


def _evaluate(fn, arrays) -> tuple[float, list[np.ndarray]]:
    with record_branches() as log:
        value = fn([Tensor(x, dtype=np.float64) for x in arrays]).item()
    return value, [m.copy() for m in log]


def _same_branches(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def numeric_grad(fn: Callable[[Sequence[Tensor]], Tensor], inputs: Sequence[np.ndarray],
                 index: int, step: float = 1e-3, max_entries: int | None = None,
                 rng: np.random.Generator | None = None, order: int = 4) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Central differences of ``fn`` w.r.t. ``inputs[index]`` in float64.

    ``order`` is the stencil accuracy order (2 or 4).
    When ``max_entries`` is set only a random subset of coordinates is probed.
    Returns ``(flat_indices, derivatives, valid)`` where ``valid`` is False for
    probes that straddled a kink of a piecewise op.
    """
    if order not in STENCILS:
        raise ValueError(f"order must be one of {sorted(STENCILS)}, got {order}")
    offsets, weights = STENCILS[order]
    base = [np.array(x, dtype=np.float64) for x in inputs]
    target = base[index]
    n = target.size
    if max_entries is not None and max_entries < n:
        rng = rng or np.random.default_rng(0)
        idx = np.sort(rng.choice(n, size=max_entries, replace=False))
    else:
        idx = np.arange(n)
    flat = target.reshape(-1)
    out = np.empty(len(idx))
    valid = np.ones(len(idx), dtype=bool)
    for j, i in enumerate(idx):
        orig = flat[i]
        total, branches = 0.0, []
        for off, wt in zip(offsets, weights):
            flat[i] = orig + off * step
            f, br = _evaluate(fn, base)
            total += wt * f
            branches.append(br)
        flat[i] = orig
        out[j] = total / step
        valid[j] = all(_same_branches(branches[0], b) for b in branches[1:])
    return idx, out, valid


@dataclass
class GradCheckResult:
    """Worst relative error over all inputs, plus probe bookkeeping."""

    max_rel_error: float
    probed: int
    skipped_kinks: int

    def passed(self, tol: float = 1e-3) -> bool:
        return self.max_rel_error < tol and self.probed > self.skipped_kinks


def check_gradients(fn: Callable[[Sequence[Tensor]], Tensor], inputs: Sequence[np.ndarray],
                    step: float = 1e-3, max_entries: int | None = None, seed: int = 0,
                    order: int = 4) -> GradCheckResult:
    """Compare autodiff against central differences for every input of ``fn``."""
    ts = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    backward(fn(ts))
    rng = np.random.default_rng(seed)
    worst, probed, skipped = 0.0, 0, 0
    for k, t in enumerate(ts):
        idx, num, valid = numeric_grad(fn, inputs, k, step=step, max_entries=max_entries, rng=rng, order=order)
        ana = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)[idx]
        worst = max(worst, relative_error(ana[valid], num[valid]))
        probed += len(idx)
        skipped += int(np.count_nonzero(~valid))
    return GradCheckResult(worst, probed, skipped)
