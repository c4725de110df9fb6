"""Desk-scale synthetic corpus: class-distinct tone/noise events on background noise."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
from scipy import signal

from .audio import CLIP_SAMPLES, SAMPLE_RATE, write_wav
from .labels import EventList, weakify, write_strong_manifest, write_unlabeled_manifest, write_weak_manifest

SYNTH_CLASSES = ("Alarm_bell_ringing", "Dog", "Vacuum_cleaner")
SPLITS = ("strong", "weak", "unlabeled", "validation")
SPLIT_FRACTIONS = (0.25, 0.25, 0.3, 0.2)


def _tone(freqs, n, rng):
    t = np.arange(n) / SAMPLE_RATE
    phase = rng.uniform(0, 2 * np.pi, size=len(freqs))
    return sum(np.sin(2 * np.pi * f * t + p) / (i + 1) for i, (f, p) in enumerate(zip(freqs, phase)))


def _band_noise(lo, hi, n, rng):
    sos = signal.butter(4, [lo, hi], btype="band", fs=SAMPLE_RATE, output="sos")
    x = signal.sosfilt(sos, rng.normal(size=n + 2048))[2048:]
    return x / (np.std(x) + 1e-12)


def event_signal(class_index: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Source waveform for synthetic class ``class_index`` (cycled if > 3 classes)."""
    kind = class_index % 3
    shift = 1.0 + 0.15 * (class_index // 3)
    if kind == 0:
        x = _tone([880.0 * shift, 1760.0 * shift], n, rng)
    elif kind == 1:
        x = _tone([350.0 * shift, 700.0 * shift, 1050.0 * shift], n, rng)
    else:
        x = _band_noise(4000.0 / shift, 6000.0 / shift, n, rng)
    x = x / (np.max(np.abs(x)) + 1e-12)
    fade = min(160, n // 2)
    env = np.ones(n)
    env[:fade] = np.linspace(0, 1, fade)
    env[n - fade:] = np.linspace(1, 0, fade)
    return x * env


def plan_clip(clip_id: str, classes: Sequence[str], rng: np.random.Generator,
              max_events: int = 3) -> EventList:
    events = []
    for _ in range(int(rng.integers(1, max_events + 1))):
        cls = classes[int(rng.integers(len(classes)))]
        dur = round(float(rng.uniform(0.5, 4.0)), 3)
        on = round(float(rng.uniform(0.0, 10.0 - dur)), 3)
        events.append((cls, on, round(on + dur, 3)))
    events.sort(key=lambda e: (e[1], e[0]))
    return EventList(clip_id, events)


def render_clip(plan: EventList, classes: Sequence[str], rng: np.random.Generator,
                noise_level: float = 0.01, event_gain=(0.1, 0.3)) -> np.ndarray:
    x = rng.normal(0.0, noise_level, size=CLIP_SAMPLES)
    for cls, on, off in plan.events:
        a, b = int(round(on * SAMPLE_RATE)), int(round(off * SAMPLE_RATE))
        amp = rng.uniform(*event_gain)
        x[a:b] += amp * event_signal(list(classes).index(cls), b - a, rng)
    return np.clip(x, -1.0, 1.0)


def split_counts(n_clips: int) -> Dict[str, int]:
    counts = [int(n_clips * f) for f in SPLIT_FRACTIONS]
    counts[2] += n_clips - sum(counts)
    return dict(zip(SPLITS, counts))


def make_corpus(out_dir, n_clips: int = 40, classes: Sequence[str] = SYNTH_CLASSES, seed: int = 0,
                event_gain=(0.1, 0.3)) -> Dict[str, Path]:
    """Write WAVs under ``out_dir/audio`` and manifests for each split.

    ``event_gain`` bounds the uniform peak amplitude of each event over a
    background of white noise with standard deviation 0.01; lower gains give
    a harder corpus. Returns the manifest paths keyed by split name, plus ``"truth"`` (strong
    labels of every clip, including unlabeled ones).
    """
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    plans: List[EventList] = []
    for i in range(n_clips):
        plan = plan_clip(f"clip_{i:04d}.wav", classes, rng)
        write_wav(out / "audio" / plan.clip_id, render_clip(plan, classes, rng, event_gain=event_gain))
        plans.append(plan)
    counts = split_counts(n_clips)
    bounds = np.cumsum([0] + [counts[s] for s in SPLITS])
    parts = {s: plans[bounds[i]:bounds[i + 1]] for i, s in enumerate(SPLITS)}
    paths = {s: out / f"{s}.tsv" for s in SPLITS}
    write_strong_manifest(paths["strong"], parts["strong"])
    write_weak_manifest(paths["weak"], [weakify(p) for p in parts["weak"]])
    write_unlabeled_manifest(paths["unlabeled"], [p.clip_id for p in parts["unlabeled"]])
    write_strong_manifest(paths["validation"], parts["validation"])
    paths["truth"] = out / "truth.tsv"
    write_strong_manifest(paths["truth"], plans)
    return paths
