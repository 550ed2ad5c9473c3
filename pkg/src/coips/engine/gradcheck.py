"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from coips.engine.tensor import Tensor


def numerical_grad(fn: Callable[[], Tensor], target: Tensor, h: float = 1e-5) -> np.ndarray:
    """d fn() / d target by central differences; ``fn`` must re-run the forward pass."""
    grad = np.zeros_like(target.data, dtype=np.float64)
    flat = target.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = float(fn().data.sum())
        flat[i] = orig - h
        minus = float(fn().data.sum())
        flat[i] = orig
        out[i] = (plus - minus) / (2 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |n|), elementwise."""
    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if numeric.size else 0.0


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Worst relative error over all ``inputs`` of the analytic vs. numeric gradient of sum(fn())."""
    for t in inputs:
        t.grad = None
    out = fn()
    out.sum().backward() if out.size != 1 else out.backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, max_relative_error(analytic, numerical_grad(fn, t, h)))
    return worst
