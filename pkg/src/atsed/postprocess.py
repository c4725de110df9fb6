"""Thresholding, class-adaptive median filtering and event decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence

import numpy as np

from .labels import CLIP_SECONDS, EventList

DEFAULT_BETA = 1.0 / 3.0


def adaptive_window(duration_s: float, beta: float, frame_hop_s: float) -> int:
    """Median window ``round(duration * beta / hop)`` frames, forced odd (ties go down), >= 1."""
    if duration_s <= 0 or beta <= 0 or frame_hop_s <= 0:
        raise ValueError("duration, beta and frame hop must be positive")
    w = int(math.floor(duration_s * beta / frame_hop_s + 0.5))
    if w % 2 == 0:
        w -= 1
    return max(w, 1)


@dataclass
class MedianConfig:
    durations: Dict[str, float]
    frame_hop_s: float = 0.064
    beta: Dict[str, float] = field(default_factory=dict)
    overrides: Dict[str, int] = field(default_factory=dict)

    def window(self, cls: str) -> int:
        if cls in self.overrides:
            w = int(self.overrides[cls])
            if w < 1 or w % 2 == 0:
                raise ValueError(f"override window for {cls} must be odd and >= 1, got {w}")
            return w
        return adaptive_window(self.durations[cls], self.beta.get(cls, DEFAULT_BETA), self.frame_hop_s)

    def windows(self, vocabulary: Sequence[str]) -> list:
        return [self.window(c) for c in vocabulary]


def median_durations(event_lists, vocabulary: Sequence[str], default: float = 1.0) -> Dict[str, float]:
    """Median event duration per class from strong labels."""
    per: Dict[str, list] = {c: [] for c in vocabulary}
    for el in event_lists:
        for cls, on, off in el.events:
            if cls in per:
                per[cls].append(off - on)
    return {c: float(np.median(v)) if v else default for c, v in per.items()}


def median_filter_1d(x: np.ndarray, window: int) -> np.ndarray:
    """Sliding median of a binary sequence with zero padding at both ends."""
    if window % 2 == 0 or window < 1:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    if window == 1:
        return x.copy()
    half = window // 2
    padded = np.concatenate([np.zeros(half), x, np.zeros(half)])
    sums = np.convolve(padded, np.ones(window), mode="valid")
    return (sums > half).astype(x.dtype)


def median_filter(frames: np.ndarray, windows: Sequence[int]) -> np.ndarray:
    """Per-class median filtering of a binary ``T x K`` matrix."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[1] != len(windows):
        raise ValueError(f"{frames.shape[1]} classes but {len(windows)} windows")
    return np.stack([median_filter_1d(frames[:, k], w) for k, w in enumerate(windows)], axis=1)


def decode_events(frames: np.ndarray, frame_hop_s: float, clip_id: str,
                  vocabulary: Sequence[str], clip_seconds: float = CLIP_SECONDS) -> EventList:
    """Maximal runs of ones become events ``[start * hop, (end + 1) * hop]``."""
    frames = np.asarray(frames) > 0.5
    events = []
    for k, cls in enumerate(vocabulary):
        col = np.concatenate([[False], frames[:, k], [False]]).astype(np.int8)
        d = np.diff(col)
        starts = np.flatnonzero(d == 1)
        ends = np.flatnonzero(d == -1)  # exclusive
        for s, e in zip(starts, ends):
            on = min(s * frame_hop_s, clip_seconds)
            off = min(e * frame_hop_s, clip_seconds)
            if off > on:
                events.append((cls, float(on), float(off)))
    events.sort(key=lambda ev: (ev[1], ev[0]))
    return EventList(clip_id, events)


def binarize(probs: np.ndarray, threshold: float) -> np.ndarray:
    return (np.asarray(probs) >= threshold).astype(np.float64)


def posteriors_to_events(probs: np.ndarray, threshold: float, windows: Sequence[int],
                         frame_hop_s: float, clip_id: str, vocabulary: Sequence[str]) -> EventList:
    return decode_events(median_filter(binarize(probs, threshold), windows), frame_hop_s, clip_id, vocabulary)
