"""Feature-domain augmentations.

All transforms take a ``T x M`` log-mel array (time first) and an explicit
``numpy.random.Generator``; none of them change shapes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class AugmentConfig:
    time_mask_max_frames: int = 62  # ~1/10 of a 626-frame clip
    frame_shift_max: int = 16
    mixup_alpha: float = 0.2
    noise_sigma: float = 0.05
    filter_aug_bands: tuple = (2, 5)
    filter_aug_db: tuple = (-6.0, 6.0)
    time_mask: bool = True
    frame_shift: bool = True
    mixup: bool = True
    gaussian_noise: bool = False
    filter_augment: bool = False
    apply_prob: float = 0.5

    def __post_init__(self):
        if self.time_mask_max_frames < 0 or self.frame_shift_max < 0 or self.noise_sigma < 0:
            raise ValueError("augmentation ranges must be non-negative")
        if self.mixup and self.mixup_alpha <= 0:
            raise ValueError("mixup_alpha must be positive when mixup is enabled")
        lo, hi = self.filter_aug_bands
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid filter_aug_bands {self.filter_aug_bands}")
        if self.filter_aug_db[1] < self.filter_aug_db[0]:
            raise ValueError(f"invalid filter_aug_db {self.filter_aug_db}")

    @classmethod
    def stage1(cls, **kw):
        return cls(gaussian_noise=True, filter_augment=False, **kw)

    @classmethod
    def stage2(cls, **kw):
        return cls(gaussian_noise=False, filter_augment=True, **kw)


def time_mask(x: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    """Zero one contiguous span of frames, width uniform in ``[0, max]``."""
    n = x.shape[0]
    width = int(rng.integers(0, min(cfg.time_mask_max_frames, n) + 1))
    if width == 0:
        return x
    start = int(rng.integers(0, n - width + 1))
    out = x.copy()
    out[start:start + width] = 0.0
    return out


def shift_frames(a: np.ndarray, shift: int) -> np.ndarray:
    """Move row ``i`` to ``i + shift``; vacated rows are zero."""
    if shift == 0:
        return a
    out = np.zeros_like(a)
    if abs(shift) >= len(a):
        return out
    if shift > 0:
        out[shift:] = a[:-shift]
    else:
        out[:shift] = a[-shift:]
    return out


def frame_shift(x: np.ndarray, targets, rng: np.random.Generator, cfg: AugmentConfig,
                label_ratio: int = 1):
    """Shift features and frame targets together along time.

    ``targets`` lives on a grid ``label_ratio`` times coarser than ``x``; the
    shift is drawn in target frames and scaled so both stay aligned.
    ``targets`` may be ``None`` (weak or unlabeled clips).
    """
    max_t = cfg.frame_shift_max // label_ratio
    s = int(rng.integers(-max_t, max_t + 1)) if max_t > 0 else 0
    if s == 0:
        return x, targets
    xs = shift_frames(x, s * label_ratio)
    ts = None if targets is None else shift_frames(targets, s)
    return xs, ts


def sample_mixup_lambda(rng: np.random.Generator, cfg: AugmentConfig) -> float:
    return float(rng.beta(cfg.mixup_alpha, cfg.mixup_alpha))


def mixup(a, b, lam: float):
    """Convex combination ``lam * a + (1 - lam) * b`` of (features, labels) pairs.

    ``labels`` may be ``None`` on both sides (unlabeled clips).
    """
    (xa, ya), (xb, yb) = a, b
    if xa.shape != xb.shape:
        raise ValueError(f"mixup feature shapes differ: {xa.shape} vs {xb.shape}")
    x = lam * xa + (1.0 - lam) * xb
    if ya is None and yb is None:
        return x, None
    if ya is None or yb is None or np.shape(ya) != np.shape(yb):
        raise ValueError("mixup label shapes differ")
    return x, lam * np.asarray(ya) + (1.0 - lam) * np.asarray(yb)


def add_gaussian_noise(x: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    if cfg.noise_sigma == 0:
        return x
    return x + rng.normal(0.0, cfg.noise_sigma, size=x.shape)


def filter_augment(x: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    """Add a random per-band gain (dB, log-domain) over random mel bands."""
    lo_db, hi_db = cfg.filter_aug_db
    if lo_db == 0 and hi_db == 0:
        return x
    m = x.shape[1]
    lo, hi = cfg.filter_aug_bands
    n_bands = int(rng.integers(lo, hi + 1))
    n_bands = max(1, min(n_bands, m))
    cuts = np.sort(rng.choice(np.arange(1, m), size=n_bands - 1, replace=False)) if n_bands > 1 else []
    bounds = np.concatenate([[0], cuts, [m]]).astype(int)
    gains_db = rng.uniform(lo_db, hi_db, size=n_bands)
    return apply_band_gains(x, bounds, gains_db)


def apply_band_gains(x: np.ndarray, bounds, gains_db) -> np.ndarray:
    """Add ``gain * ln(10) / 20`` to mel bins ``bounds[i]:bounds[i+1]``."""
    offset = np.zeros(x.shape[1])
    for i, g in enumerate(gains_db):
        offset[bounds[i]:bounds[i + 1]] = g * math.log(10.0) / 20.0
    return x + offset[None, :]
