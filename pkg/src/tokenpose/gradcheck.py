"""Central finite-difference checks for analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_input: list = field(default_factory=list)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def numerical_gradient(f, arrays, index: int, h: float = 1e-5, entries=None) -> np.ndarray:
    """d f / d arrays[index] by central differences; ``f`` maps arrays to a float.

    With ``entries`` (flat indices) only those coordinates are differenced;
    the others are left at 0.
    """
    x = arrays[index]
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if entries is None else entries:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(arrays)
        flat[i] = orig - h
        fm = f(arrays)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def gradcheck(fn, inputs, h: float = 1e-5, seed: int = 0, wrt=None,
              max_entries: Optional[int] = None) -> GradCheckResult:
    """Compare backward() against central differences.

    ``fn`` takes Tensors and returns a Tensor of any shape. Non-scalar
    outputs are contracted with a fixed random projection so that every
    column of the Jacobian contributes to the check.

    Args:
        fn: function under test.
        inputs: float64 arrays, one per argument of ``fn``.
        h: finite-difference step.
        seed: seed of the output projection.
        wrt: indices of inputs to check (default: all).
        max_entries: check at most this many randomly chosen coordinates
            per input (default: every coordinate).
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    wrt = range(len(arrays)) if wrt is None else wrt
    probe = fn(*[Tensor(a) for a in arrays])
    rng = np.random.default_rng(seed)
    weights = rng.standard_normal(probe.shape)

    def scalar(arrs) -> float:
        out = fn(*[Tensor(a) for a in arrs])
        return float(np.sum(out.data * weights))

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    loss = (out * Tensor(weights)).sum()
    backward(loss)

    worst, per_input = 0.0, []
    for i in wrt:
        analytic = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(arrays[i])
        entries = None
        if max_entries is not None and arrays[i].size > max_entries:
            entries = rng.choice(arrays[i].size, max_entries, replace=False)
        numeric = numerical_gradient(scalar, arrays, i, h, entries)
        errors = relative_error(analytic, numeric).reshape(-1)
        err = float((errors if entries is None else errors[entries]).max())
        per_input.append(err)
        worst = max(worst, err)
    return GradCheckResult(worst, per_input)
