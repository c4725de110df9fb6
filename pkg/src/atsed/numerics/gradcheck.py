"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def numeric_gradient(fn: Callable[[], Tensor], target: Tensor, step: float = 1e-5,
                     indices=None) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. ``target.data``.

    ``indices`` restricts evaluation to a subset of flat positions; the other
    entries of the returned array are NaN.
    """
    target.data = np.ascontiguousarray(target.data)
    flat = target.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    positions = range(flat.size) if indices is None else indices
    with no_grad():
        for i in positions:
            orig = flat[i]
            flat[i] = orig + step
            up = float(fn().data)
            flat[i] = orig - step
            down = float(fn().data)
            flat[i] = orig
            out[i] = (up - down) / (2.0 * step)
    return out.reshape(target.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)`` over evaluated entries."""
    mask = ~np.isnan(numeric)
    a, n = analytic[mask], numeric[mask]
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = 1e-5,
                    max_per_tensor: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Compare autodiff and finite-difference gradients; return the worst relative error.

    ``fn`` must rebuild the graph from ``tensors`` on every call and be
    deterministic (no dropout, fixed batch statistics are fine).
    """
    for t in tensors:
        t.grad = None
    loss = fn()
    backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for t, a in zip(tensors, analytic):
        idx = None
        if max_per_tensor is not None and t.size > max_per_tensor:
            idx = rng.choice(t.size, size=max_per_tensor, replace=False)
        n = numeric_gradient(fn, t, step, idx)
        worst = max(worst, relative_error(a, n))
    return worst
