"""In-memory clip sets and feature extraction for training and inference."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..audio import HOP, SAMPLE_RATE, load_audio, logmel
from ..labels import EventList, WeakLabel, frame_targets, weakify
from ..numerics.checkpoint import load_arrays, save_arrays


@dataclass
class ClipSet:
    """Features plus whatever labels a source provides.

    ``clip_labels`` is ``N x K`` multi-hot (weak, weakified or pseudo-weak);
    ``events`` keeps strong annotations so frame targets can be rasterised
    at any model resolution.
    """

    ids: List[str]
    features: List[np.ndarray]
    clip_labels: Optional[np.ndarray] = None
    events: Optional[List[EventList]] = None

    def __len__(self):
        return len(self.ids)

    def frame_labels(self, n_frames: int, hop_s: float, vocabulary: Sequence[str]) -> List[np.ndarray]:
        if self.events is None:
            raise ValueError("clip set has no strong labels")
        return [frame_targets(e, n_frames, hop_s, vocabulary) for e in self.events]


def normalize(x: np.ndarray) -> np.ndarray:
    """Per-clip standardisation of a log-mel matrix."""
    return (x - x.mean()) / (x.std() + 1e-8)


class FeatureExtractor:
    """Log-mel features per audio file, optionally cached on disk."""

    def __init__(self, audio_root, n_mels: int, cache_dir=None):
        self.audio_root = Path(audio_root)
        self.n_mels = n_mels
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self._memo: Dict[str, np.ndarray] = {}

    def __call__(self, clip_id: str) -> np.ndarray:
        if clip_id in self._memo:
            return self._memo[clip_id]
        cached = None
        if self.cache_dir is not None:
            cached = self.cache_dir / f"{Path(clip_id).stem}.mel{self.n_mels}.bin"
            if cached.exists():
                feats = load_arrays(cached)["logmel"]
                self._memo[clip_id] = feats
                return feats
        feats = logmel(load_audio(self.audio_root / clip_id), self.n_mels).frames
        if cached is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            save_arrays(cached, {"logmel": feats})
            feats = load_arrays(cached)["logmel"]  # identical values whether cached or not
        self._memo[clip_id] = feats
        return feats

    def many(self, ids: Sequence[str]) -> List[np.ndarray]:
        return [self(c) for c in ids]


def multi_hot(labels: Sequence[WeakLabel], vocabulary: Sequence[str]) -> np.ndarray:
    return np.stack([lab.multi_hot(vocabulary) for lab in labels]) if labels else np.zeros((0, len(vocabulary)))


def strong_set(events: Sequence[EventList], extract, vocabulary) -> ClipSet:
    ids = [e.clip_id for e in events]
    return ClipSet(ids, extract.many(ids), multi_hot([weakify(e) for e in events], vocabulary), list(events))


def weak_set(labels: Sequence[WeakLabel], extract, vocabulary) -> ClipSet:
    ids = [lab.clip_id for lab in labels]
    return ClipSet(ids, extract.many(ids), multi_hot(labels, vocabulary))


def unlabeled_set(ids: Sequence[str], extract) -> ClipSet:
    return ClipSet(list(ids), extract.many(ids))


def output_hop(time_downsample: int) -> float:
    return HOP / SAMPLE_RATE * time_downsample
