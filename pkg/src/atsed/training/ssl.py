"""Mean-teacher helpers: warmup, EMA teacher, interpolation consistency."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from ..models.crnn import Posteriors
from ..numerics import functional as F
from ..numerics.optim import ema_update
from ..numerics.tensor import Tensor, no_grad
from .losses import consistency_loss


@dataclass
class SslConfig:
    ema_decay: float = 0.999
    consistency_weight_max: float = 2.0  # clip level
    frame_consistency_weight_max: float = 2.0
    warmup_epochs: int = 50
    ict_enabled: bool = True
    ict_alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ValueError("ema_decay must lie in [0, 1]")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")


def warmup_coefficient(epoch: float, warmup_epochs: int) -> float:
    """Exponential ramp-up ``exp(-5 (1 - min(epoch / warmup, 1))^2)``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if warmup_epochs == 0:
        return 1.0
    frac = 1.0 - min(epoch / warmup_epochs, 1.0)
    return math.exp(-5.0 * frac * frac)


def make_teacher(student):
    teacher = copy.deepcopy(student)
    for p in teacher.parameters():
        p.requires_grad = False
        p.grad = None
    return teacher


def update_teacher(teacher, student, decay: float, step: int) -> None:
    """EMA of student weights; the decay ramps in over the first steps."""
    alpha = min(1.0 - 1.0 / (step + 1), decay)
    ema_update([p.data for p in teacher.parameters()], [p.data for p in student.parameters()], alpha)


def mix_posteriors(a: Posteriors, b: Posteriors, lam: float) -> Posteriors:
    return Posteriors(F.stop_gradient(a.frame * lam + b.frame * (1.0 - lam)),
                      F.stop_gradient(a.clip * lam + b.clip * (1.0 - lam)))


def ict_term(x1, x2, lam: float, student, teacher) -> Tensor:
    """``MSE(student(lam x1 + (1 - lam) x2), lam teacher(x1) + (1 - lam) teacher(x2))``."""
    x1 = np.asarray(getattr(x1, "data", x1))
    x2 = np.asarray(getattr(x2, "data", x2))
    with no_grad():
        t1, t2 = teacher(x1), teacher(x2)
    target = mix_posteriors(t1, t2, lam)
    return consistency_loss(student(lam * x1 + (1.0 - lam) * x2), target)
