"""Adam and the mean-teacher exponential moving average."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence, **kw) -> "AdamState":
        arrays = [p.data if hasattr(p, "data") else p for p in params]
        return cls(m=[np.zeros_like(a) for a in arrays], v=[np.zeros_like(a) for a in arrays], **kw)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float | None = None) -> List[np.ndarray]:
    """One bias-corrected Adam update. Returns new parameter arrays.

    ``lr`` overrides ``state.lr`` for this step (used by the warmup schedule).
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    lr = state.lr if lr is None else lr
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"param {i}: shape {p.shape} != grad shape {g.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        out.append((p - lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype))
    return out


class Adam:
    """Stateful wrapper that updates :class:`Parameter` objects in place."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState.for_params(self.params, lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self, lr: float | None = None) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new = adam_step([p.data for p in self.params], grads, self.state, lr)
        for p, value in zip(self.params, new):
            p.data = value

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def ema_update(teacher: Sequence[np.ndarray], student: Sequence[np.ndarray], decay: float) -> None:
    """In place: ``teacher <- decay * teacher + (1 - decay) * student``."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"decay must lie in [0, 1], got {decay}")
    for t, s in zip(teacher, student):
        if t.shape != s.shape:
            raise ValueError(f"teacher/student shape mismatch {t.shape} vs {s.shape}")
        t *= decay
        t += (1.0 - decay) * s
