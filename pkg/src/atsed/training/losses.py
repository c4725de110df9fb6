"""Supervised and consistency losses (all mean-reduced scalars)."""

from __future__ import annotations

from dataclasses import dataclass

from ..numerics import functional as F
from ..numerics.tensor import Tensor, as_tensor

EPS = 1e-7


@dataclass(frozen=True)
class AflConfig:
    gamma: float = 0.625
    zeta: float = 1.0

    def __post_init__(self):
        if self.gamma < 0 or self.zeta < 0:
            raise ValueError("AFL exponents must be non-negative")


def bce_loss(p, y) -> Tensor:
    """``-mean[y ln p + (1 - y) ln(1 - p)]`` with ``p`` clamped to ``[1e-7, 1 - 1e-7]``."""
    p = F.clip(as_tensor(p), EPS, 1.0 - EPS)
    y = as_tensor(y)
    ll = y * F.log(p) + (1.0 - y) * F.log(1.0 - p)
    return -F.mean(ll)


def afl_loss(p, y, cfg: AflConfig) -> Tensor:
    """Asymmetric focal loss.

    ``-mean[(1 - p)^gamma * y * ln p + p^zeta * (1 - y) * ln(1 - p)]``; the
    negation makes it a non-negative quantity to minimise. ``gamma`` weights
    active targets, ``zeta`` inactive ones.
    """
    p = F.clip(as_tensor(p), EPS, 1.0 - EPS)
    y = as_tensor(y)
    pos = y * F.log(p)
    neg = (1.0 - y) * F.log(1.0 - p)
    if cfg.gamma:
        pos = F.power(1.0 - p, cfg.gamma) * pos
    if cfg.zeta:
        neg = F.power(p, cfg.zeta) * neg
    return -F.mean(pos + neg)


def mse(a, b) -> Tensor:
    d = as_tensor(a) - as_tensor(b)
    return F.mean(d * d)


def consistency_loss(student, teacher) -> Tensor:
    """Mean squared error over all frame and clip probabilities.

    Teacher outputs are treated as constants.
    """
    sf, sc = student.frame, student.clip
    tf, tc = F.stop_gradient(teacher.frame), F.stop_gradient(teacher.clip)
    n_frame, n_clip = sf.size, sc.size
    total = F.sum((sf - tf) * (sf - tf)) + F.sum((sc - tc) * (sc - tc))
    return total * (1.0 / (n_frame + n_clip))
